"""Critical-point search and classification for the loop-space energy.

Critical points come in three kinds: global minimizers (energy 4 delta^2,
the curve retraces its first segment), smooth closed geodesics, and zig-zag
points (the same geodesic traversed with a double reversal across the first
segment, sqrt-energy larger by exactly 2 delta).  The kind is read off the
one-sided velocity pattern at the first two breakpoints.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from . import loopspace as ls
from . import manifold as mf
from .errors import (
    BoundaryEscape,
    DomainError,
    MaxIterations,
    UnclassifiableCritical,
)
from .loopspace import BrokenGeodesic, LoopConfig, LoopParams, PrimeChart
from .manifold import MetricModel

__all__ = [
    "Kind",
    "CriticalPoint",
    "SearchConfig",
    "refine",
    "classify",
    "make_zigzag",
    "multistart",
    "find_through_point",
]


class Kind(enum.Enum):
    GLOBAL_MINIMUM = "GlobalMinimum"
    SMOOTH = "SmoothGeodesic"
    ZIGZAG = "ZigZag"


@dataclass(frozen=True)
class CriticalPoint:
    """A converged configuration with its classification."""

    config: LoopConfig
    energy: float
    kind: Kind
    grad_norm: float
    ev: mf.TangentVector

    @property
    def period(self) -> float | None:
        """Length of the underlying closed geodesic, when there is one."""
        if self.kind is Kind.SMOOTH:
            return float(np.sqrt(self.energy))
        if self.kind is Kind.ZIGZAG:
            return float(np.sqrt(self.energy) - 2.0 * self.config.params.delta)
        return None

    def geodesic_seed(self):
        """(point, g-unit direction) generating the underlying geodesic."""
        model = self.config.params.model
        if self.kind is Kind.ZIGZAG:
            # the long stretch leaves q1 against the first segment
            broken = ls.reconstruct(self.config)
            q1 = self.config.points[1]
            v = broken.v_plus[1]
            return q1, v / float(model.gnorm(q1, v))
        u = self.ev.vector / self.config.params.delta
        return self.config.points[0], u

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "energy": self.energy,
            "period": self.period,
            "grad_norm": self.grad_norm,
            "ev": self.ev.vector.tolist(),
            "config": self.config.to_dict(),
        }


@dataclass(frozen=True)
class SearchConfig:
    """Tuning knobs for refinement and multistart surveys."""

    max_iter: int = 150
    grad_tol: float = 1e-8
    newton_threshold: float = 1e-3
    newton_max_iter: int = 25
    fd_step: float = 1e-4
    zero_cut: float = 1e-4
    seed: int = 0
    n_starts: int = 40
    energy_gap: float = 1e-5
    ev_angle_gap: float = 0.05
    shift_match_tol: float = 0.05
    descent_rtol: float = 1e-9
    descent_log_tol: float = 1e-10
    align_cos: float = 0.999

    def __post_init__(self):
        for name in ("grad_tol", "newton_threshold", "fd_step", "zero_cut",
                     "energy_gap", "ev_angle_gap", "shift_match_tol"):
            if getattr(self, name) <= 0:
                raise DomainError(f"SearchConfig.{name} must be positive")


# ---------------------------------------------------------------------------
# refinement


def _chart_hessian_action(chart: PrimeChart, fixed: np.ndarray | None,
                          g: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """H @ g by central differences of the chart gradient along g."""
    gn = np.linalg.norm(g)
    if gn == 0.0:
        return np.zeros_like(g)
    d = g / gn
    gp = _masked_grad(chart, eps * d, fixed)
    gm = _masked_grad(chart, -eps * d, fixed)
    return (gp - gm) / (2.0 * eps) * gn


def _masked_grad(chart: PrimeChart, xi: np.ndarray, fixed: np.ndarray | None):
    g = chart.gradient_at(xi)
    if fixed is not None:
        g = g.copy()
        g[fixed] = 0.0
    return g


def _chart_hessian(chart: PrimeChart, fixed: np.ndarray | None, step: float):
    dim = chart.dim
    H = np.empty((dim, dim))
    for j in range(dim):
        e = np.zeros(dim)
        e[j] = step
        H[:, j] = (_masked_grad(chart, e, fixed) - _masked_grad(chart, -e, fixed)) / (
            2.0 * step
        )
    return H


def _newton_step(H: np.ndarray, g: np.ndarray, zero_cut: float, max_norm: float):
    """Newton step toward the nearest critical point of any signature:
    invert the signed eigenvalues, drop the near-kernel."""
    lam, Q = np.linalg.eigh(0.5 * (H + H.T))
    scale = np.max(np.abs(lam))
    if scale == 0.0:
        return -g
    keep = np.abs(lam) > zero_cut * scale
    coef = np.zeros_like(lam)
    coef[keep] = (Q.T @ g)[keep] / lam[keep]
    s = -Q @ coef
    ns = np.linalg.norm(s)
    if ns > max_norm:
        s *= max_norm / ns
    return s


@dataclass
class _RefineState:
    chart: PrimeChart
    fixed: np.ndarray | None
    cone: tuple[np.ndarray, np.ndarray, float] | None  # (q0, u0, half-angle)

    def move(self, xi: np.ndarray) -> "_RefineState":
        chart = self.chart.recentered(xi)
        if self.cone is not None:
            q0, u0, half = self.cone
            model = chart.params.model
            cosang = float(model.inner(q0, chart.u, u0))
            cosang /= float(model.gnorm(q0, u0)) or 1.0
            ang = np.arccos(np.clip(cosang, -1.0, 1.0))
            if ang > half:
                # pull the direction back onto the cone boundary
                w = chart.u - cosang * u0
                wn = float(model.gnorm(q0, w))
                if wn > 0:
                    u_clamped = np.cos(half) * u0 + np.sin(half) * (w / wn)
                    chart = PrimeChart(chart.params, chart.q0, u_clamped, chart.free)
        return _RefineState(chart, self.fixed, self.cone)


def refine(
    init: LoopConfig,
    search: SearchConfig,
    pin_base: bool = False,
    cone: tuple[np.ndarray, float] | None = None,
) -> CriticalPoint:
    """Drive a configuration to a critical point.

    Two phases: monotone descent on the squared gradient norm (critical
    points of every index are minima of that merit), then a saddle-free
    Newton polish on the gradient itself once its norm is small.  Steps that
    would leave the open domain are rejected by backtracking.

    pin_base freezes q0 (through-point searches); `cone` restricts the unit
    direction to a g-angle cone around a reference direction.
    """
    params = init.params
    model = params.model
    n = model.dim
    chart = PrimeChart.from_config(init)
    fixed = None
    if pin_base:
        fixed = np.zeros(chart.dim, dtype=bool)
        fixed[:n] = True
    cone_state = None
    if cone is not None:
        u0, half = cone
        u0 = mf.project_tangent(chart.q0, np.asarray(u0, dtype=float))
        u0 = u0 / float(model.gnorm(chart.q0, u0))
        cone_state = (chart.q0.copy(), u0, float(half))
        if not pin_base:
            raise DomainError("cone restriction requires a pinned base point")
    state = _RefineState(chart, fixed, cone_state)

    with mf.precision(rtol=search.descent_rtol, log_tol=search.descent_log_tol):
        state, ok = _descent_phase(state, search)
    gnorm = _polish_phase(state, search)
    chart = state.chart
    cfg = chart.config_at(np.zeros(chart.dim))
    if gnorm > search.grad_tol * 10:
        raise MaxIterations(
            f"refinement stalled with gradient norm {gnorm:.3g}"
        )
    kind = classify(cfg, search)
    return CriticalPoint(cfg, cfg.energy, kind, gnorm, cfg.ev())


def _descent_phase(state: _RefineState, search: SearchConfig):
    """Backtracking descent on the squared-gradient merit."""
    step = 0.05
    g = _masked_grad(state.chart, np.zeros(state.chart.dim), state.fixed)
    for _ in range(search.max_iter):
        gn = np.linalg.norm(g)
        if gn < search.newton_threshold:
            return state, True
        Hg = _chart_hessian_action(state.chart, state.fixed, g)
        d = -Hg
        dn = np.linalg.norm(d)
        if dn < 1e-14 * gn:
            d, dn = -g, gn  # merit gradient vanished; fall back to energy slope
        d = d / dn
        merit0 = 0.5 * gn * gn
        slope = float(Hg @ d)  # derivative of the merit along d
        accepted = False
        t = step
        for _ in range(25):
            xi = t * d
            if state.chart.domain_margin(xi) <= 0:
                t *= 0.5
                continue
            g_new = _masked_grad(state.chart, xi, state.fixed)
            merit = 0.5 * float(g_new @ g_new)
            if merit < merit0 + 1e-4 * t * slope:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            return state, False
        state = state.move(t * d)
        g = _masked_grad(state.chart, np.zeros(state.chart.dim), state.fixed)
        step = min(max(t * 2.0, 1e-6), 0.25)
    return state, np.linalg.norm(g) < search.newton_threshold


def _polish_phase(state: _RefineState, search: SearchConfig) -> float:
    """Newton iterations on the gradient, recentering the chart each step."""
    gnorm = np.inf
    for _ in range(search.newton_max_iter):
        chart = state.chart
        g = _masked_grad(chart, np.zeros(chart.dim), state.fixed)
        gnorm = float(np.linalg.norm(g))
        if gnorm < search.grad_tol:
            return gnorm
        H = _chart_hessian(chart, state.fixed, search.fd_step)
        s = _newton_step(H, g, search.zero_cut, max_norm=0.2)
        # backtrack on the gradient norm, rejecting domain escapes
        for _ in range(12):
            if chart.domain_margin(s) > 0:
                g_new = _masked_grad(chart, s, state.fixed)
                if np.linalg.norm(g_new) < gnorm:
                    break
            s *= 0.5
        else:
            return gnorm
        state.chart = state.move(s).chart
    g = _masked_grad(state.chart, np.zeros(state.chart.dim), state.fixed)
    return float(np.linalg.norm(g))


# ---------------------------------------------------------------------------
# classification


def classify(config: LoopConfig, search: SearchConfig | None = None) -> Kind:
    """Read the critical kind off the one-sided velocity pattern.

    Velocities at breakpoints 0 and 1 must be either aligned or reversed;
    all others aligned.  A mixed or ambiguous pattern (a geodesic cusp)
    raises UnclassifiableCritical.
    """
    if search is None:
        search = SearchConfig()
    broken = ls.reconstruct(config)
    model = config.params.model
    pts = config.points
    num = model.inner(pts, broken.v_minus, broken.v_plus)
    den = model.gnorm(pts, broken.v_minus) * model.gnorm(pts, broken.v_plus)
    cosang = num / den
    thr = search.align_cos
    aligned = cosang > thr
    reversed_ = cosang < -thr
    if not np.all(aligned[2:]):
        raise UnclassifiableCritical(
            f"interior joint not smooth: min cos = {np.min(cosang[2:]):.6f}"
        )
    if aligned[0] and aligned[1]:
        return Kind.SMOOTH
    if reversed_[0] and reversed_[1]:
        if config.sigma <= config.params.delta * (1.0 + 1e-6):
            return Kind.GLOBAL_MINIMUM
        return Kind.ZIGZAG
    raise UnclassifiableCritical(
        f"mixed reversal pattern at the first segment: cos = {cosang[:2]}"
    )


# ---------------------------------------------------------------------------
# zig-zag construction


def _zigzag_points(model: MetricModel, params: LoopParams, q0: np.ndarray,
                   u: np.ndarray, length: float) -> np.ndarray:
    """Zig-zag sampling of a closed unit-speed geodesic: arc positions 0,
    delta, then backward steps of (length + delta)/(k-1) wrapped around."""
    k, delta = params.k, params.delta
    step = (length + delta) / (k - 1)
    s = np.empty(k)
    s[0] = 0.0
    s[1] = delta
    s[2:] = (delta - np.arange(1, k - 1) * step) % length
    if model.has_closed_form:
        pts, _ = model.exp_closed(q0[None], s[:, None] * u[None])
    else:
        order = np.argsort(s)
        xs, _ = mf.integrate_geodesics(
            model, q0[None], u[None], length, grid=s[order] / length
        )
        pts = np.empty((k, model.ambient))
        pts[order] = xs[:, 0]
    return pts


def make_zigzag(smooth: CriticalPoint, search: SearchConfig | None = None) -> CriticalPoint:
    """Zig-zag critical point over the same geodesic as a smooth one.

    Same first two points; the remaining points walk the geodesic backwards
    through q0 and all the way around, so sqrt(energy) grows by exactly
    2 delta.  Requires k > k_threshold(length + 2 delta, delta, rho).
    """
    if smooth.kind is not Kind.SMOOTH:
        raise DomainError("make_zigzag needs a SmoothGeodesic input")
    if search is None:
        search = SearchConfig()
    params = smooth.config.params
    model = params.model
    delta, k = params.delta, params.k
    length = smooth.period
    kbar = ls.k_threshold(length + 2.0 * delta, delta, model.rho)
    if not k > kbar:
        raise DomainError(f"k = {k} too small for a zig-zag: need k > {kbar:g}")
    q0, u = smooth.config.points[0], smooth.ev.vector / delta
    pts = _zigzag_points(model, params, q0, u, length)
    cfg = LoopConfig(params, pts, delta_tol=1e-6)
    # polish away sampling noise (the construction is critical analytically)
    cp = refine(cfg, replace(search, max_iter=40))
    if cp.kind is not Kind.ZIGZAG:
        raise UnclassifiableCritical(f"zig-zag construction converged to {cp.kind}")
    return cp


# ---------------------------------------------------------------------------
# multistart survey


def _orbit_cloud(cp: CriticalPoint, n_samples: int = 512) -> np.ndarray:
    """Dense (point, unit direction) samples of the underlying geodesic."""
    model = cp.config.params.model
    q, u = cp.geodesic_seed()
    grid = np.linspace(0.0, 1.0, n_samples, endpoint=False)
    xs, ws = mf.integrate_geodesics(model, q[None], u[None], cp.period, grid=grid)
    ws = ws / model.gnorm(xs[:, 0], ws[:, 0])[:, None, None]
    return np.concatenate([xs[:, 0], ws[:, 0]], axis=-1)  # (n_samples, 2d)


def same_orbit(a: CriticalPoint, b: CriticalPoint, tol: float,
               cloud_cache: dict | None = None) -> bool:
    """Do two critical points trace the same geodesic (up to basepoint shift)?"""
    if a.kind is not b.kind:
        return False
    model = a.config.params.model
    if a.kind is Kind.GLOBAL_MINIMUM:
        pa = np.concatenate([a.config.points[0], a.ev.vector])
        pb = np.concatenate([b.config.points[0], b.ev.vector])
        return bool(np.linalg.norm(pa - pb) < tol)
    key = id(a)
    if cloud_cache is not None and key in cloud_cache:
        cloud = cloud_cache[key]
    else:
        cloud = _orbit_cloud(a)
        if cloud_cache is not None:
            cloud_cache[key] = cloud
    qb, ub = b.geodesic_seed()
    probe = np.concatenate([qb, ub])
    probe_rev = np.concatenate([qb, -ub])  # same geodesic, opposite traversal
    diff = np.minimum(
        np.linalg.norm(cloud - probe, axis=-1),
        np.linalg.norm(cloud - probe_rev, axis=-1),
    )
    return bool(np.min(diff) < tol)


def closed_geodesic_candidates(
    model: MetricModel,
    params: LoopParams,
    n_shoots: int,
    rng: np.random.Generator,
    length_max: float,
    closure_tol: float = 1e-6,
) -> list[tuple[np.ndarray, np.ndarray, float]]:
    """Shoot random unit tangents and detect closed geodesics.

    Returns (point, direction, length) triples: one per detected closure and
    per iterate whose total length remains admissible for the given k.
    """
    q, u = mf.sample_unit_tangent(model, n_shoots, rng)
    scan = mf.detect_closure_batch(model, q, u, t_max=1.05 * length_max)
    out = []
    near_misses = []
    for i in range(n_shoots):
        p = scan.periods[i]
        if not np.isfinite(p) or scan.residuals[i] > closure_tol:
            if scan.best_times is not None and np.isfinite(scan.best_times[i]):
                near_misses.append((scan.residuals[i], i))
            continue
        m = 1
        while m * p <= length_max:
            if params.k > ls.k_threshold(m * p, params.delta, model.rho):
                out.append((q[i], u[i], m * float(p)))
            m += 1
    if not out:
        # metrics with isolated closed geodesics: random shoots only pass
        # near them, so chase the best near-returns with a shooting solver
        # that frees the base point and direction as well
        near_misses.sort(key=lambda t: t[0])
        for _, i in near_misses[: max(6, n_shoots // 3)]:
            hit = mf.find_closed_geodesic(model, q[i], u[i], scan.best_times[i])
            if hit is None:
                continue
            qq, uu, p = hit
            m = 1
            while m * p <= length_max:
                if params.k > ls.k_threshold(m * p, params.delta, model.rho):
                    out.append((qq, uu, m * p))
                m += 1
    return out


def _push(found: list[CriticalPoint], cp: CriticalPoint, window, search,
          cache: dict) -> None:
    if not window[0] <= cp.energy <= window[1]:
        return
    for other in found:
        if abs(np.sqrt(cp.energy) - np.sqrt(other.energy)) < search.energy_gap:
            if same_orbit(other, cp, search.shift_match_tol, cache):
                return
    found.append(cp)


def multistart(
    model: MetricModel,
    params: LoopParams,
    search: SearchConfig,
    window: tuple[float, float] | None = None,
) -> list[CriticalPoint]:
    """Survey critical points by refining many seeded starts.

    Smooth candidates are seeded by closure detection on random shoots
    (including iterates); each found smooth geodesic contributes its zig-zag
    partner when the energy window and k permit; global minima come from
    direct construction at random tangents.  Every candidate goes through
    refine, so only configurations with vanishing gradient are reported.
    Results are deduplicated by (energy, kind, shared orbit) and sorted by
    energy.
    """
    if window is None:
        window = (4.0 * params.delta**2 - 1e-9, ls.sup_energy(params))
    rng = np.random.default_rng(search.seed)
    hi = min(window[1], ls.sup_energy(params))
    delta = params.delta
    found: list[CriticalPoint] = []
    cache: dict = {}

    # smooth geodesics: closure-seeded, then verified by refinement
    length_max = np.sqrt(hi)
    for q, u, length in closed_geodesic_candidates(
        model, params, search.n_starts, rng, length_max
    ):
        try:
            cfg = ls.sample_closed_geodesic(model, params, q, u, length)
            cp = refine(cfg, search)
        except (MaxIterations, BoundaryEscape, UnclassifiableCritical, DomainError):
            continue
        _push(found, cp, window, search, cache)

    # zig-zag partners of every smooth point found
    for cp in list(found):
        if cp.kind is not Kind.SMOOTH:
            continue
        if not window[0] <= (np.sqrt(cp.energy) + 2 * delta) ** 2 <= window[1]:
            continue
        try:
            _push(found, make_zigzag(cp, search), window, search, cache)
        except (DomainError, MaxIterations, UnclassifiableCritical):
            continue

    # global minima, when the window reaches down to their level
    if window[0] <= 4.0 * delta**2:
        for _ in range(max(2, search.n_starts // 10)):
            q, u = mf.sample_unit_tangent(model, 1, rng)
            try:
                cp = refine(ls.minimum_config(model, params, q[0], delta * u[0]),
                            search)
            except (MaxIterations, BoundaryEscape, UnclassifiableCritical):
                continue
            _push(found, cp, window, search, cache)

    found.sort(key=lambda c: c.energy)
    return found


# ---------------------------------------------------------------------------
# through-point search


def find_through_point(
    model: MetricModel,
    params: LoopParams,
    base_point: np.ndarray,
    energy_target: float,
    search: SearchConfig,
    n_directions: int = 12,
    energy_tol: float = 1e-4,
) -> CriticalPoint | None:
    """Look for a closed geodesic through a fixed point at a fixed energy.

    Scans initial directions in T_{q0}, refines with the base point pinned,
    and accepts a candidate whose full (unpinned) gradient vanishes and whose
    energy matches the target.  Returns None when every direction misses.
    """
    if not 4.0 * params.delta**2 < energy_target < ls.sup_energy(params):
        raise DomainError("energy target outside the attainable range")
    q0 = np.asarray(base_point, dtype=float)
    q0 = q0 / np.linalg.norm(q0)
    length = float(np.sqrt(energy_target))
    rng = np.random.default_rng(search.seed)
    frame = mf.tangent_frame(q0)
    n = model.dim
    rel_tol = energy_tol * max(1.0, energy_target)

    # trial directions: a uniform circle on surfaces, random otherwise
    dirs = np.empty((n_directions, model.ambient))
    for trial in range(n_directions):
        if n == 2:
            ang = 2.0 * np.pi * trial / n_directions
            u = np.cos(ang) * frame[:, 0] + np.sin(ang) * frame[:, 1]
        else:
            u = frame @ rng.standard_normal(n)
        dirs[trial] = u / float(model.gnorm(q0, u))

    # a critical config at this level is a sampled closed geodesic through
    # q0, so closure detection prunes the direction scan before the more
    # expensive pinned refinement
    scan = mf.detect_closure_batch(
        model, np.broadcast_to(q0, dirs.shape).copy(), dirs, t_max=1.1 * length
    )
    for trial in np.argsort(scan.residuals):
        p = scan.periods[trial]
        if not np.isfinite(p) or scan.residuals[trial] > 1e-6:
            continue
        m = length / p
        if abs(m - round(m)) * p > 1e-3 or round(m) < 1:
            continue
        try:
            cfg = ls.sample_closed_geodesic(model, params, q0, dirs[trial], length)
            cp = refine(cfg, search, pin_base=True)
        except (DomainError, MaxIterations, BoundaryEscape, UnclassifiableCritical):
            continue
        if abs(cp.energy - energy_target) > rel_tol:
            continue
        # full-gradient check: pinned convergence is not enough
        chart = PrimeChart.from_config(cp.config)
        g_full = chart.gradient_at(np.zeros(chart.dim))
        if np.linalg.norm(g_full) < max(search.grad_tol * 100, 1e-5):
            return cp
    return None
