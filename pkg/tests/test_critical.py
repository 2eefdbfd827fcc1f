import numpy as np
import pytest
from scipy.special import ellipe

import geocrit as gc
from geocrit import critical as cr
from geocrit.errors import DomainError, UnclassifiableCritical

from conftest import principal_ellipse

DELTA = 0.1
SEARCH = gc.SearchConfig(seed=0)


def perturbed_great_circle(model, params, scale, seed=0):
    cfg = gc.sample_closed_geodesic(
        model, params, np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]),
        2 * np.pi,
    )
    rng = np.random.default_rng(seed)
    pts = cfg.points.copy()
    noise = rng.standard_normal(pts[2:].shape)
    noise -= pts[2:] * np.sum(noise * pts[2:], axis=-1, keepdims=True)
    pts[2:] += scale * noise
    pts /= np.linalg.norm(pts, axis=-1, keepdims=True)
    return gc.LoopConfig(params, pts, delta_tol=0.5)


class TestRefine:
    def test_perturbed_great_circle_converges(self, round2, round2_params):
        init = perturbed_great_circle(round2, round2_params, 0.05)
        cp = gc.refine(init, SEARCH)
        assert cp.kind == gc.Kind.SMOOTH
        assert abs(cp.energy - (2 * np.pi) ** 2) < 1e-6
        assert cp.grad_norm < SEARCH.grad_tol

    def test_near_minimum_converges_to_minimum(self, round2, round2_params):
        q = np.array([0.0, 0.0, 1.0])
        v = DELTA * np.array([1.0, 0.0, 0.0])
        base = gc.minimum_config(round2, round2_params, q, v)
        rng = np.random.default_rng(5)
        pts = base.points.copy()
        noise = rng.standard_normal(pts[2:].shape)
        noise -= pts[2:] * np.sum(noise * pts[2:], axis=-1, keepdims=True)
        pts[2:] += 0.02 * noise
        pts /= np.linalg.norm(pts, axis=-1, keepdims=True)
        init = gc.LoopConfig(round2_params, pts, delta_tol=0.5)
        cp = gc.refine(init, SEARCH)
        assert cp.kind == gc.Kind.GLOBAL_MINIMUM
        assert abs(cp.energy - 4 * DELTA**2) < 1e-10

    def test_ellipsoid_principal_ellipse(self, ellipsoid):
        q, u, length = principal_ellipse(ellipsoid, 0, 1)
        params = gc.LoopParams(ellipsoid, DELTA, 24)
        cfg = gc.sample_closed_geodesic(ellipsoid, params, q, u, length)
        cp = gc.refine(cfg, SEARCH)
        assert cp.kind == gc.Kind.SMOOTH
        # circumference of the (1.0, 1.1) ellipse via the complete elliptic
        # integral of the second kind
        a, b = 1.1, 1.0
        circ = 4 * a * ellipe(1 - (b / a) ** 2)
        assert abs(np.sqrt(cp.energy) - circ) < 1e-5

    def test_constant_speed_at_critical(self, great_circle_cp):
        from geocrit import loopspace as ls
        speeds = ls.reconstruct(great_circle_cp.config).segment_speeds()
        assert np.max(np.abs(speeds / np.mean(speeds) - 1.0)) < 1e-6

    def test_random_start_reaches_genuine_critical_point(self, round2,
                                                         round2_params):
        rng = np.random.default_rng(11)
        init = gc.random_config(round2, round2_params, rng, spread=0.5)
        cp = gc.refine(init, SEARCH)
        assert cp.grad_norm < SEARCH.grad_tol
        assert cp.energy >= 4 * DELTA**2 - 1e-10
        assert cp.kind in (gc.Kind.GLOBAL_MINIMUM, gc.Kind.SMOOTH,
                           gc.Kind.ZIGZAG)


class TestClassify:
    def test_great_circle_is_smooth(self, great_circle_cp):
        assert great_circle_cp.kind == gc.Kind.SMOOTH
        assert great_circle_cp.period == pytest.approx(2 * np.pi, abs=1e-7)

    def test_minimum_detected(self, round2, round2_params):
        cfg = gc.minimum_config(
            round2, round2_params, np.array([1.0, 0.0, 0.0]),
            DELTA * np.array([0.0, 1.0, 0.0]),
        )
        cp = gc.refine(cfg, SEARCH)
        assert cp.kind == gc.Kind.GLOBAL_MINIMUM
        assert cp.period is None

    def test_random_config_unclassifiable(self, round2, round2_params):
        rng = np.random.default_rng(3)
        cfg = gc.random_config(round2, round2_params, rng, spread=0.4)
        with pytest.raises(UnclassifiableCritical):
            cr.classify(cfg, SEARCH)


class TestZigZag:
    def test_partner_relation(self, great_circle_cp):
        zz = gc.make_zigzag(great_circle_cp, SEARCH)
        assert zz.kind == gc.Kind.ZIGZAG
        root_e = np.sqrt(zz.energy)
        assert abs(root_e - (np.sqrt(great_circle_cp.energy) + 2 * DELTA)) < 1e-8

    def test_partner_shares_initial_data(self, great_circle_cp):
        zz = gc.make_zigzag(great_circle_cp, SEARCH)
        # same base point and same first-segment direction as the smooth orbit
        assert np.linalg.norm(
            zz.config.points[0] - great_circle_cp.config.points[0]) < 1e-6
        ev_s = great_circle_cp.ev.vector
        ev_z = zz.ev.vector
        cos = ev_s @ ev_z / (np.linalg.norm(ev_s) * np.linalg.norm(ev_z))
        assert cos > 0.999

    def test_k_too_small_raises(self, round2):
        # k = 5 admits the length-2*pi geodesic but not its zig-zag partner
        # of length 2*pi + 2*delta
        params = gc.LoopParams(round2, DELTA, 5)
        assert params.k > gc.k_threshold(2 * np.pi, DELTA, round2.rho)
        assert params.k < gc.k_threshold(2 * np.pi + 2 * DELTA, DELTA, round2.rho)
        cfg = gc.sample_closed_geodesic(
            round2, params, np.array([1.0, 0.0, 0.0]),
            np.array([0.0, 1.0, 0.0]), 2 * np.pi,
        )
        cp = gc.refine(cfg, SEARCH)
        with pytest.raises(DomainError):
            gc.make_zigzag(cp, SEARCH)


class TestDegenerateFamilies:
    def test_basepoint_shift_preserves_energy(self, round2, round2_params):
        energies = []
        for j in range(10):
            phase = 2 * np.pi * j / 10
            q = np.array([np.cos(phase), np.sin(phase), 0.0])
            u = np.array([-np.sin(phase), np.cos(phase), 0.0])
            cfg = gc.sample_closed_geodesic(round2, round2_params, q, u, 2 * np.pi)
            energies.append(gc.refine(cfg, SEARCH).energy)
        energies = np.asarray(energies)
        assert np.max(np.abs(energies - energies[0])) < 1e-9


class TestMultistart:
    def test_round_sphere_levels(self, round2, round2_params):
        search = gc.SearchConfig(seed=2, n_starts=12)
        window = (4 * DELTA**2 + 1e-3, 45.0)
        found = gc.multistart(round2, round2_params, search, window=window)
        energies = sorted(cp.energy for cp in found)
        expected = [(2 * np.pi) ** 2, (2 * np.pi + 2 * DELTA) ** 2]
        assert len(energies) >= 2
        levels = sorted(set(round(e, 4) for e in energies))
        for want in expected:
            assert any(abs(lv - want) < 1e-4 for lv in levels)
        kinds = {cp.kind for cp in found}
        assert gc.Kind.SMOOTH in kinds and gc.Kind.ZIGZAG in kinds

    def test_results_sorted_and_converged(self, round2, round2_params):
        search = gc.SearchConfig(seed=7, n_starts=8)
        found = gc.multistart(round2, round2_params, search,
                              window=(0.0, 45.0))
        energies = [cp.energy for cp in found]
        assert energies == sorted(energies)
        assert all(cp.grad_norm < search.grad_tol for cp in found)
        # the global minimum level shows up when the window allows it
        assert any(cp.kind == gc.Kind.GLOBAL_MINIMUM for cp in found)


class TestThroughPoint:
    def test_round_sphere_hit(self, round2, round2_params):
        base = np.array([0.0, 1.0, 0.0])
        cp = gc.find_through_point(
            round2, round2_params, base, (2 * np.pi) ** 2, SEARCH,
            n_directions=6,
        )
        assert cp is not None
        assert abs(cp.energy - (2 * np.pi) ** 2) < 1e-4
        assert np.linalg.norm(cp.config.points[0] - base) < 1e-8

    def test_ellipsoid_generic_point_misses(self, ellipsoid):
        params = gc.LoopParams(ellipsoid, DELTA, 24)
        base = np.array([0.3, 0.5, np.sqrt(1 - 0.34)])
        a, b = 1.1, 1.0
        level = (4 * a * ellipe(1 - (b / a) ** 2)) ** 2
        cp = gc.find_through_point(
            ellipsoid, params, base, level, SEARCH, n_directions=8)
        assert cp is None
