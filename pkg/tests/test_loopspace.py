import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import geocrit as gc
from geocrit import loopspace as ls
from geocrit import manifold as mf
from geocrit.errors import DomainError


def random_cfg(model, delta=0.1, k=8, seed=0):
    params = gc.LoopParams(model, delta, k)
    rng = np.random.default_rng(seed)
    return gc.random_config(model, params, rng)


class TestEnergy:
    @pytest.mark.parametrize("model_name", ["round2", "ellipsoid", "zoll"])
    def test_closed_form_equals_telescoped(self, model_name, request):
        model = request.getfixturevalue(model_name)
        for seed in range(5):
            cfg = random_cfg(model, seed=seed)
            e1 = cfg.energy
            e2 = cfg.energy_telescoped()
            assert abs(e1 - e2) < 1e-12 * max(1.0, e1)

    def test_minimum_energy_value(self, round2, round2_params):
        q = np.array([1.0, 0.0, 0.0])
        v = 0.1 * np.array([0.0, 1.0, 0.0])
        cfg = gc.minimum_config(round2, round2_params, q, v)
        assert abs(cfg.energy - 4 * 0.1**2) < 1e-12

    def test_breakpoints_monotone_and_tau1(self, ellipsoid):
        cfg = random_cfg(ellipsoid, seed=3)
        taus = ls.breakpoints(cfg)
        assert taus[0] == 0.0 and taus[-1] == 1.0
        assert np.all(np.diff(taus) > 0)
        delta, sigma = cfg.params.delta, cfg.sigma
        assert abs(taus[1] - delta / (delta + sigma)) < 1e-14

    def test_two_variable_energy_minimized_at_tau1(self, round2):
        cfg = random_cfg(round2, seed=4)
        tau1 = cfg.taus[1]
        f0 = ls.f_two_var(round2, cfg.points, tau1)
        assert abs(f0 - cfg.energy) < 1e-10
        for d in (-0.01, 0.01):
            assert ls.f_two_var(round2, cfg.points, tau1 + d) > f0

    def test_sup_energy_formula(self, round2_params):
        expected = (0.1 + np.sqrt(7) * np.pi) ** 2
        assert abs(gc.sup_energy(round2_params) - expected) < 1e-12


class TestValidation:
    def test_wrong_first_segment_rejected(self, round2, round2_params):
        rng = np.random.default_rng(0)
        cfg = gc.random_config(round2, round2_params, rng)
        pts = cfg.points.copy()
        # move q1 so the first segment is far from delta
        pts[1] = gc.exp_map(round2, pts[0], 0.4 * gc.log_map(
            round2, pts[0], pts[1]).vector / 0.1)
        with pytest.raises(DomainError):
            gc.LoopConfig(round2_params, pts)

    def test_domain_bound_rejected(self, round2):
        params = gc.LoopParams(round2, 0.1, 4)
        # k = 4 with three spread-out points: tail sum of squares above rho^2
        pts = np.array(
            [[1.0, 0.0, 0.0], [np.cos(0.1), np.sin(0.1), 0.0],
             [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]]
        )
        with pytest.raises(DomainError):
            gc.LoopConfig(params, pts)

    def test_k_threshold_strictness(self, round2):
        params = gc.LoopParams(round2, 0.1, 5)
        with pytest.raises(DomainError):
            gc.sample_closed_geodesic(
                round2, params, np.array([1.0, 0.0, 0.0]),
                np.array([0.0, 1.0, 0.0]), 4 * np.pi,
            )

    def test_immutable(self, round2, round2_params):
        cfg = random_cfg(round2)
        with pytest.raises(AttributeError):
            cfg.sigma = 1.0


class TestEvaluation:
    def test_ev_norm_is_delta(self, ellipsoid):
        cfg = random_cfg(ellipsoid, seed=9)
        tv = cfg.ev()
        assert abs(tv.norm - 0.1) < 1e-9

    def test_ev_maps_to_second_point(self, round2):
        cfg = random_cfg(round2, seed=1)
        tv = cfg.ev()
        p = gc.exp_map(round2, cfg.points[0], tv.vector)
        assert np.linalg.norm(p - cfg.points[1]) < 1e-10


class TestBrokenGeodesic:
    def test_segment_speeds_constant_at_critical(self, great_circle_cp):
        broken = ls.reconstruct(great_circle_cp.config)
        speeds = broken.segment_speeds()
        assert np.max(np.abs(speeds / speeds[0] - 1.0)) < 1e-6

    def test_mismatches_vanish_at_smooth_critical(self, great_circle_cp):
        broken = ls.reconstruct(great_circle_cp.config)
        assert np.max(broken.mismatch_norms()) < 1e-7

    def test_polyline_closes(self, great_circle_cp):
        broken = ls.reconstruct(great_circle_cp.config)
        path = broken.sample_polyline(per_segment=6)
        assert np.linalg.norm(path[0] - path[-1]) < 1e-9
        assert np.allclose(np.linalg.norm(path, axis=-1), 1.0, atol=1e-9)


class TestPrimeChart:
    def test_center_reproduces_config(self, ellipsoid):
        cfg = random_cfg(ellipsoid, seed=6)
        chart = gc.PrimeChart.from_config(cfg)
        again = chart.config_at(np.zeros(chart.dim))
        assert np.max(np.abs(again.points - cfg.points)) < 1e-9

    def test_first_segment_constraint_built_in(self, round2):
        cfg = random_cfg(round2, seed=8)
        chart = gc.PrimeChart.from_config(cfg)
        rng = np.random.default_rng(0)
        xi = 0.05 * rng.standard_normal(chart.dim)
        moved = chart.config_at(xi)
        assert abs(moved.seg_dists[0] - 0.1) < 1e-9

    @pytest.mark.parametrize("model_name", ["round2", "ellipsoid"])
    def test_gradient_matches_finite_differences(self, model_name, request):
        model = request.getfixturevalue(model_name)
        cfg = random_cfg(model, seed=12)
        chart = gc.PrimeChart.from_config(cfg)
        g = chart.gradient_at(np.zeros(chart.dim))
        rng = np.random.default_rng(1)
        h = 1e-4
        for _ in range(3):
            d = rng.standard_normal(chart.dim)
            d /= np.linalg.norm(d)
            fd = (chart.energy_at(h * d) - chart.energy_at(-h * d)) / (2 * h)
            assert abs(g @ d - fd) < 1e-5 * max(1.0, abs(fd))

    def test_recentered_preserves_configuration(self, round2):
        cfg = random_cfg(round2, seed=2)
        chart = gc.PrimeChart.from_config(cfg)
        xi = np.zeros(chart.dim)
        xi[0] = 0.03
        moved = chart.points_at(xi)
        again = chart.recentered(xi).points_at(np.zeros(chart.dim))
        assert np.max(np.abs(moved - again)) < 1e-9

    def test_dimension(self, round2_params):
        assert round2_params.chart_dim == (2 * 2 - 1) + (8 - 2) * 2


class TestConstructions:
    def test_sampled_geodesic_is_nearly_critical(self, round2, round2_params):
        cfg = gc.sample_closed_geodesic(
            round2, round2_params, np.array([0.0, 1.0, 0.0]),
            np.array([0.0, 0.0, 1.0]), 2 * np.pi,
        )
        chart = gc.PrimeChart.from_config(cfg)
        assert np.linalg.norm(chart.gradient_at(np.zeros(chart.dim))) < 1e-8

    def test_minimum_is_critical(self, round2, round2_params):
        cfg = gc.minimum_config(
            round2, round2_params, np.array([1.0, 0.0, 0.0]),
            0.1 * np.array([0.0, 0.0, 1.0]),
        )
        chart = gc.PrimeChart.from_config(cfg)
        assert np.linalg.norm(chart.gradient_at(np.zeros(chart.dim))) < 1e-8

    def test_random_config_valid(self, zoll):
        params = gc.LoopParams(zoll, 0.1, 8)
        rng = np.random.default_rng(42)
        for _ in range(5):
            cfg = gc.random_config(zoll, params, rng)
            assert abs(cfg.seg_dists[0] - 0.1) < 1e-8
            assert np.sum(cfg.seg_dists[1:] ** 2) < zoll.rho**2

    def test_k_threshold_value(self):
        # 1 + (length - delta)^2 / rho^2
        assert abs(gc.k_threshold(2 * np.pi, 0.1, np.pi)
                   - (1 + (2 * np.pi - 0.1) ** 2 / np.pi**2)) < 1e-12


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_energy_identity_property(seed):
    model = gc.RoundSphere(dim=2)
    params = gc.LoopParams(model, 0.1, 8)
    cfg = gc.random_config(model, params, np.random.default_rng(seed))
    assert abs(cfg.energy - cfg.energy_telescoped()) < 1e-12 * max(1.0, cfg.energy)
    assert cfg.energy >= 4 * 0.1**2 - 1e-12


def test_config_dict_roundtrip(ellipsoid):
    cfg = random_cfg(ellipsoid, seed=77)
    again = gc.LoopConfig.from_dict(cfg.to_dict())
    assert np.max(np.abs(again.points - cfg.points)) < 1e-15
    assert again.params.delta == cfg.params.delta
