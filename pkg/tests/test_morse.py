import numpy as np
import pytest

import geocrit as gc
from geocrit import morse
from geocrit.errors import DomainError

from conftest import principal_ellipse

DELTA = 0.1
SEARCH = gc.SearchConfig(seed=0)


def geodesic_cp(model, params, q, u, length):
    cfg = gc.sample_closed_geodesic(model, params, q, u, length)
    return gc.refine(cfg, SEARCH)


@pytest.fixture(scope="module")
def sphere2_prime(round2, round2_params):
    return geodesic_cp(
        round2, round2_params, np.array([1.0, 0.0, 0.0]),
        np.array([0.0, 1.0, 0.0]), 2 * np.pi,
    )


@pytest.fixture(scope="module")
def sphere2_report(sphere2_prime):
    H, asym = gc.hessian(sphere2_prime, full_output=True)
    return gc.index_nullity(H, asymmetry=asym)


class TestCounts:
    def test_sphere2_prime_geodesic(self, sphere2_report):
        assert sphere2_report.index == 1
        assert sphere2_report.kernel_dim == 2 * 2 - 1  # = 3 on the 2-sphere

    def test_sphere3_prime_geodesic(self, round3):
        params = gc.LoopParams(round3, DELTA, 8)
        cp = geodesic_cp(
            round3, params, np.array([1.0, 0.0, 0.0, 0.0]),
            np.array([0.0, 1.0, 0.0, 0.0]), 2 * np.pi,
        )
        H, asym = gc.hessian(cp, full_output=True)
        rep = gc.index_nullity(H, asymmetry=asym)
        assert rep.index == 2  # = n - 1 for the round n-sphere
        assert rep.kernel_dim == 2 * 3 - 1

    def test_sphere2_double_cover(self, round2):
        params = gc.LoopParams(round2, DELTA, 18)
        cp = geodesic_cp(
            round2, params, np.array([1.0, 0.0, 0.0]),
            np.array([0.0, 1.0, 0.0]), 4 * np.pi,
        )
        H, asym = gc.hessian(cp, full_output=True)
        rep = gc.index_nullity(H, asymmetry=asym)
        assert rep.index == 3
        assert rep.kernel_dim == 3

    def test_minimum_positive_semidefinite(self, round2, round2_params):
        cfg = gc.minimum_config(
            round2, round2_params, np.array([1.0, 0.0, 0.0]),
            DELTA * np.array([0.0, 1.0, 0.0]),
        )
        cp = gc.refine(cfg, SEARCH)
        H, asym = gc.hessian(cp, full_output=True)
        rep = gc.index_nullity(H, asymmetry=asym)
        assert rep.index == 0
        assert rep.kernel_dim == 3  # one S^1 of minima per unit tangent vector

    def test_counts_sum_to_dimension(self, sphere2_report, round2_params):
        total = (sphere2_report.index + sphere2_report.kernel_dim
                 + sphere2_report.positive)
        assert total == round2_params.chart_dim
        assert sphere2_report.dim == round2_params.chart_dim

    def test_eigenvalues_sorted_and_gap(self, sphere2_report):
        w = sphere2_report.eigenvalues
        assert np.all(np.diff(w) >= 0)
        assert sphere2_report.gap > 0.1  # spectral gap is O(1) here

    def test_unconverged_point_rejected(self, round2, round2_params):
        cfg = gc.sample_closed_geodesic(
            round2, round2_params, np.array([1.0, 0.0, 0.0]),
            np.array([0.0, 1.0, 0.0]), 2 * np.pi,
        )
        rng = np.random.default_rng(0)
        pts = cfg.points.copy()
        pts[3] += 0.01 * rng.standard_normal(3)
        pts[3] /= np.linalg.norm(pts[3])
        fake = gc.CriticalPoint(
            config=gc.LoopConfig(round2_params, pts, delta_tol=0.5),
            energy=cfg.energy, kind=gc.Kind.SMOOTH, grad_norm=0.5,
            ev=cfg.ev(),
        )
        with pytest.raises(DomainError):
            gc.hessian(fake)


class TestSymmetry:
    def test_hessian_nearly_symmetric(self, round2, round2_params):
        cp = geodesic_cp(
            round2, round2_params, np.array([0.0, 0.0, 1.0]),
            np.array([1.0, 0.0, 0.0]), 2 * np.pi,
        )
        _, asym = gc.hessian(cp, full_output=True)
        assert asym < 1e-5

    def test_workers_agree(self, sphere2_prime):
        H1, _ = gc.hessian(sphere2_prime, full_output=True)
        H2, _ = gc.hessian(sphere2_prime, workers=4, full_output=True)
        assert np.max(np.abs(H1 - H2)) < 1e-12


class TestIterateFormulas:
    def test_expected_index_arithmetic(self):
        assert morse.iterate_index_expected(1, 3, 2) == 5
        assert morse.iterate_index_expected(1, 1, 2) == 1
        # i' = n - 1 gives m(n-1) + (m-1)(n-1) = (2m-1)(n-1)
        for n in (2, 3, 4):
            for m in (1, 2, 5):
                assert (morse.iterate_index_expected(n - 1, m, n)
                        == (2 * m - 1) * (n - 1))

    def test_expected_nullity(self):
        assert morse.iterate_nullity_expected(2) == 2
        assert morse.iterate_nullity_expected(3) == 4


class TestUniformDiscretization:
    def test_round_sphere_agrees(self, round2, sphere2_report):
        pts, thetas = morse.sample_geodesic_uniform(
            round2, np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]),
            2 * np.pi, 12,
        )
        rep = morse.uniform_discretization_index(round2, pts, thetas)
        assert rep.index == sphere2_report.index
        assert rep.kernel_dim == sphere2_report.kernel_dim

    def test_ellipsoid_ellipse_agrees(self, ellipsoid):
        q, u, length = principal_ellipse(ellipsoid, 0, 1)
        params = gc.LoopParams(ellipsoid, DELTA, 24)
        cp = geodesic_cp(ellipsoid, params, q, u, length)
        H, asym = gc.hessian(cp, full_output=True)
        rep_loop = gc.index_nullity(H, asymmetry=asym)

        pts, thetas = morse.sample_geodesic_uniform(ellipsoid, q, u, length, 24)
        rep_uni = morse.uniform_discretization_index(ellipsoid, pts, thetas)
        assert rep_uni.index == rep_loop.index
        assert rep_uni.kernel_dim == rep_loop.kernel_dim

    def test_dimension(self, round2):
        pts, thetas = morse.sample_geodesic_uniform(
            round2, np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]),
            2 * np.pi, 10,
        )
        rep = morse.uniform_discretization_index(round2, pts, thetas)
        assert rep.dim == 10 * 2


class TestReportSerialization:
    def test_to_dict_roundtrip_fields(self, sphere2_report):
        d = sphere2_report.to_dict()
        assert d["index"] == sphere2_report.index
        assert d["kernel_dim"] == sphere2_report.kernel_dim
        assert len(d["eigenvalues"]) == sphere2_report.dim
