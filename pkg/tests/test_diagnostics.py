import numpy as np
import pytest

import geocrit as gc
from geocrit import diagnostics as dg

from conftest import principal_ellipse

DELTA = 0.1


class TestBesseZollScan:
    def test_round_sphere_is_zoll(self, round2):
        rep = gc.besse_zoll_scan(round2, n_samples=60, t_max=8.0, seed=1)
        assert rep.verdict == "Zoll"
        assert rep.closure_fraction == 1.0
        assert abs(rep.period - 2 * np.pi) < 1e-4

    def test_rotation_invariant_metric_is_zoll(self, zoll):
        rep = gc.besse_zoll_scan(zoll, n_samples=60, t_max=8.0, seed=2)
        assert rep.verdict == "Zoll"
        assert abs(rep.period - 2 * np.pi) < 1e-4

    def test_ellipsoid_is_not_besse(self, ellipsoid):
        rep = gc.besse_zoll_scan(ellipsoid, n_samples=60, t_max=15.0, seed=3)
        assert rep.verdict == "NonBesse"
        assert rep.closure_fraction < 0.05

    def test_deterministic_given_seed(self, round2):
        a = gc.besse_zoll_scan(round2, n_samples=30, t_max=8.0, seed=7)
        b = gc.besse_zoll_scan(round2, n_samples=30, t_max=8.0, seed=7)
        assert a.to_dict() == b.to_dict()


class TestClustering:
    def test_single_cluster(self):
        periods = np.array([6.2831, 6.2832, 6.28315])
        clusters = dg._cluster_periods(periods, gap=1e-3)
        assert len(clusters) == 1
        center, count = clusters[0]
        assert count == 3
        assert abs(center - 6.28315) < 1e-3

    def test_splits_on_gap(self):
        periods = np.array([2.0, 2.0001, 4.0, 4.0002, 6.0])
        clusters = dg._cluster_periods(periods, gap=0.01)
        assert [c for _, c in clusters] == [2, 2, 1]

    def test_common_multiple_detects_besse_pattern(self):
        # periods 2, 3, 6 share the common period 6
        centers = [2.0, 3.0, 6.0]
        common = dg._common_multiple(centers, tol=1e-6)
        assert common == pytest.approx(6.0)

    def test_common_multiple_rejects_incommensurable(self):
        centers = [2.0, 2.0 * np.sqrt(2.0)]
        assert dg._common_multiple(centers, tol=1e-9) is None


class TestEvCoverage:
    def test_round_sphere_full_coverage(self, round2, round2_params):
        search = gc.SearchConfig(seed=0)
        frac, misses = gc.ev_coverage(
            round2, round2_params, (2 * np.pi) ** 2, n_grid=12, search=search)
        assert frac == 1.0
        assert misses == []

    def test_round_sphere_zigzag_level(self, round2, round2_params):
        search = gc.SearchConfig(seed=0)
        level = (2 * np.pi + 2 * DELTA) ** 2
        frac, _ = gc.ev_coverage(
            round2, round2_params, level, n_grid=8, search=search)
        assert frac == 1.0

    def test_ellipsoid_isolated_geodesics_uncovered(self, ellipsoid):
        search = gc.SearchConfig(seed=0)
        params = gc.LoopParams(ellipsoid, DELTA, 24)
        _, _, length = principal_ellipse(ellipsoid, 0, 1)
        frac, misses = gc.ev_coverage(
            ellipsoid, params, length**2, n_grid=10, search=search)
        assert frac < 0.2
        assert len(misses) >= 8
        # witnesses carry a base point on the sphere and a unit direction
        q, u = misses[0]
        assert abs(np.linalg.norm(q) - 1.0) < 1e-9


class TestMinMaxGapReport:
    def test_round_sphere_report(self, round2, round2_params):
        search = gc.SearchConfig(seed=0, n_starts=10)
        rep = gc.minmax_gap_report(
            round2, round2_params, search, n_scan=40, t_max=8.0, n_grid=8)
        assert rep.verdict == "Zoll"
        assert abs(rep.geodesic_period - 2 * np.pi) < 1e-6
        assert rep.coverage_fraction == 1.0
        assert "consistent" in rep.summary
        assert rep.lowest_critical_kind == "SmoothGeodesic"

    def test_report_serialization(self, round2, round2_params):
        search = gc.SearchConfig(seed=0, n_starts=6)
        rep = gc.minmax_gap_report(
            round2, round2_params, search, n_scan=30, t_max=8.0, n_grid=6)
        d = rep.to_dict()
        assert d["verdict"] == rep.verdict
        row = rep.csv_row()
        assert len(row) > 0
