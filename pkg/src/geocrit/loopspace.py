"""Finite-dimensional loop space of k-point configurations on a sphere.

A configuration is an ordered tuple (q_0, ..., q_{k-1}) whose first segment
has fixed length delta and whose remaining segments satisfy
sum d(q_i, q_{i+1})^2 < rho^2.  The associated 1-periodic curve is the broken
geodesic through the points with breakpoint times

    tau_0 = 0,  tau_1 = delta / (delta + sigma),
    tau_i = tau_1 + (i-1)(1 - tau_1)/(k-1),

and its energy collapses to the closed form (delta + sigma)^2 with
sigma^2 = (k-1) sum_{i != 0} d(q_i, q_{i+1})^2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import manifold as mf
from .errors import DomainError
from .manifold import MetricModel, TangentVector

__all__ = [
    "LoopParams",
    "LoopConfig",
    "PrimeChart",
    "BrokenGeodesic",
    "k_threshold",
    "sup_energy",
    "f_two_var",
    "sample_closed_geodesic",
    "minimum_config",
    "random_config",
]


@dataclass(frozen=True)
class LoopParams:
    """Discretization parameters: first-segment length delta and point count k."""

    model: MetricModel
    delta: float
    k: int

    def __post_init__(self):
        if not 0.0 < self.delta < self.model.rho:
            raise DomainError(
                f"delta must lie in (0, rho) = (0, {self.model.rho:g}), got {self.delta:g}"
            )
        if self.k < 3:
            raise DomainError(f"k must be >= 3, got {self.k}")

    @property
    def chart_dim(self) -> int:
        n = self.model.dim
        return (2 * n - 1) + (self.k - 2) * n


def k_threshold(length: float, delta: float, rho: float) -> float:
    """Smallest admissible point count (exclusive) for containing a closed
    geodesic of the given length: 1 + (length - delta)^2 / rho^2."""
    if not length > delta > 0:
        raise DomainError("need length > delta > 0")
    if rho <= 0:
        raise DomainError("rho must be positive")
    return 1.0 + (length - delta) ** 2 / rho**2


def sup_energy(params: LoopParams) -> float:
    """Boundary value and supremum of the energy: (delta + sqrt(k-1) rho)^2."""
    return (params.delta + np.sqrt(params.k - 1) * params.model.rho) ** 2


class LoopConfig:
    """An immutable point of the loop space, with cached segment data."""

    __slots__ = ("params", "points", "seg_dists", "sigma", "taus", "_logs_fw")

    def __init__(self, params: LoopParams, points: np.ndarray, check: bool = True,
                 delta_tol: float = 1e-8):
        points = np.asarray(points, dtype=float)
        if points.shape != (params.k, params.model.ambient):
            raise DomainError(
                f"expected {params.k} points of dimension {params.model.ambient}"
            )
        points = points / np.linalg.norm(points, axis=-1, keepdims=True)
        model = params.model
        logs_fw = mf.log_batch(model, points, np.roll(points, -1, axis=0))
        seg = model.gnorm(points, logs_fw)
        if check:
            if abs(seg[0] - params.delta) > delta_tol:
                raise DomainError(
                    f"first segment has length {seg[0]:.12g}, expected delta = {params.delta:g}"
                )
            tail = float(np.sum(seg[1:] ** 2))
            if not tail < model.rho**2:
                raise DomainError(
                    f"sum of squared segment lengths {tail:g} >= rho^2 = {model.rho ** 2:g}"
                )
        sigma = float(np.sqrt((params.k - 1) * np.sum(seg[1:] ** 2)))
        delta = params.delta
        tau1 = delta / (delta + sigma)
        taus = np.empty(params.k + 1)
        taus[0] = 0.0
        taus[1] = tau1
        taus[2:] = tau1 + np.arange(1, params.k) * (1.0 - tau1) / (params.k - 1)
        taus[-1] = 1.0
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "seg_dists", seg)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "taus", taus)
        object.__setattr__(self, "_logs_fw", logs_fw)

    def __setattr__(self, *a):  # immutable after construction
        raise AttributeError("LoopConfig is immutable")

    @property
    def energy(self) -> float:
        return (self.params.delta + self.sigma) ** 2

    def energy_telescoped(self) -> float:
        """Energy as sum d_i^2 / (tau_{i+1} - tau_i); equals the closed form."""
        dt = np.diff(self.taus)
        return float(np.sum(self.seg_dists**2 / dt))

    def ev(self) -> TangentVector:
        """Evaluation map: the initial tangent vector exp_{q0}^{-1}(q1)."""
        v = self._logs_fw[0]
        return TangentVector(self.points[0], v, float(self.params.model.gnorm(self.points[0], v)))

    def to_dict(self) -> dict:
        return {
            "metric": self.params.model.describe(),
            "delta": self.params.delta,
            "k": self.params.k,
            "points": self.points.tolist(),
        }

    @staticmethod
    def from_dict(data: dict, model: MetricModel | None = None) -> "LoopConfig":
        if model is None:
            model = mf.make_model(data["metric"])
        params = LoopParams(model, float(data["delta"]), int(data["k"]))
        return LoopConfig(params, np.asarray(data["points"], dtype=float))


def sigma(config: LoopConfig) -> float:
    return config.sigma


def breakpoints(config: LoopConfig) -> np.ndarray:
    return config.taus.copy()


def energy(config: LoopConfig) -> float:
    return config.energy


def f_two_var(model: MetricModel, points: np.ndarray, tau: float) -> float:
    """Two-variable energy: d(q0,q1)^2/tau + (k-1)/(1-tau) * sum_{i!=0} d^2.

    Defined for arbitrary point tuples with consecutive distances below rho;
    at tau = tau_1(q) it coincides with the configuration energy, and tau_1
    is its unique minimizer in tau.
    """
    if not 0.0 < tau < 1.0:
        raise DomainError(f"tau must lie in (0, 1), got {tau:g}")
    points = np.asarray(points, dtype=float)
    k = len(points)
    seg = mf.dist_batch(model, points, np.roll(points, -1, axis=0))
    if np.any(seg >= model.rho):
        raise DomainError("consecutive distance >= rho")
    return float(seg[0] ** 2 / tau + (k - 1) / (1.0 - tau) * np.sum(seg[1:] ** 2))


# ---------------------------------------------------------------------------
# broken geodesic reconstruction


@dataclass(frozen=True)
class BrokenGeodesic:
    """Per-segment geodesic data of the curve through a configuration."""

    config: LoopConfig
    v_plus: np.ndarray  # (k, d) outgoing velocities at each q_i
    v_minus: np.ndarray  # (k, d) incoming velocities at each q_i

    def mismatches(self) -> np.ndarray:
        """v_i^- - v_i^+ at every breakpoint, shape (k, d)."""
        return self.v_minus - self.v_plus

    def mismatch_norms(self) -> np.ndarray:
        model = self.config.params.model
        return model.gnorm(self.config.points, self.mismatches())

    def segment_speeds(self) -> np.ndarray:
        model = self.config.params.model
        return model.gnorm(self.config.points, self.v_plus)

    def sample_polyline(self, per_segment: int = 20) -> np.ndarray:
        """Dense sampling of the curve, (k * per_segment + 1, d)."""
        cfg = self.config
        model = cfg.params.model
        k = cfg.params.k
        dt = np.diff(cfg.taus)
        frac = np.linspace(0.0, 1.0, per_segment + 1)
        xs, _ = mf.integrate_geodesics(
            model, cfg.points, self.v_plus, dt, grid=frac
        )  # (per_segment+1, k, d)
        path = np.concatenate([xs[:-1, i] for i in range(k)] + [cfg.points[:1]])
        return path


def reconstruct(config: LoopConfig) -> BrokenGeodesic:
    """One-sided velocities of the broken geodesic through the configuration."""
    model = config.params.model
    pts = config.points
    logs_fw = config._logs_fw
    logs_bw = mf.log_batch(model, pts, np.roll(pts, 1, axis=0))
    dt = np.diff(config.taus)  # (k,)
    v_plus = logs_fw / dt[:, None]
    v_minus = -logs_bw / np.roll(dt, 1)[:, None]
    return BrokenGeodesic(config, v_plus, v_minus)


# ---------------------------------------------------------------------------
# the prime chart (constraint-free coordinates)


class PrimeChart:
    """Local coordinates (q0, unit direction u, free points q_2..q_{k-1}).

    The first segment constraint is built in: q_1 = exp_{q0}(delta * u) with
    |u|_g = 1.  Coordinates are split as xi = (a, b, c) with a in R^n moving
    q0, b in R^{n-1} moving u on the g-unit sphere of T_{q0}, and c in
    R^{(k-2) n} moving the free points; all through fixed orthonormal frames
    rooted at the chart center.
    """

    def __init__(self, params: LoopParams, q0: np.ndarray, u: np.ndarray,
                 free: np.ndarray):
        model = params.model
        self.params = params
        self.q0 = np.asarray(q0, dtype=float)
        u = mf.project_tangent(self.q0, np.asarray(u, dtype=float))
        self.u = u / float(model.gnorm(self.q0, u))
        self.free = np.asarray(free, dtype=float)
        n = model.dim
        self.frame0 = mf.tangent_frame(self.q0)  # (d, n)
        # complement of u inside T_{q0}: top n-1 singular directions of the
        # frame with the u-component removed
        P = self.frame0 - np.outer(self.u, self.u @ self.frame0) / float(self.u @ self.u)
        U, s, _ = np.linalg.svd(P, full_matrices=False)
        self.frame_u = U[:, : n - 1]  # (d, n-1)
        self.frames_free = mf.tangent_frame(self.free)  # (k-2, d, n)
        self.dim = params.chart_dim

    # -- construction --------------------------------------------------------

    @classmethod
    def from_config(cls, config: LoopConfig) -> "PrimeChart":
        ev = config.ev()
        u = ev.vector / config.params.delta
        return cls(config.params, config.points[0], u, config.points[2:])

    # -- coordinate splitting -------------------------------------------------

    def _split(self, xi: np.ndarray):
        n = self.params.model.dim
        a = xi[:n]
        b = xi[n : 2 * n - 1]
        c = xi[2 * n - 1 :].reshape(self.params.k - 2, n)
        return a, b, c

    def _base_and_dir(self, a: np.ndarray, b: np.ndarray):
        model = self.params.model
        y0 = self.q0 + self.frame0 @ a
        q0 = y0 / np.linalg.norm(y0)
        w = self.u + self.frame_u @ b
        w = mf.project_tangent(q0, w)
        u = w / float(model.gnorm(q0, w))
        return q0, u

    def points_at(self, xi: np.ndarray) -> np.ndarray:
        a, b, c = self._split(np.asarray(xi, dtype=float))
        model = self.params.model
        q0, u = self._base_and_dir(a, b)
        q1 = mf.exp_batch(model, q0[None], self.params.delta * u[None])[0]
        y = self.free + np.einsum("idn,in->id", self.frames_free, c)
        qs = y / np.linalg.norm(y, axis=-1, keepdims=True)
        return np.concatenate([q0[None], q1[None], qs], axis=0)

    def config_at(self, xi: np.ndarray, check: bool = True) -> LoopConfig:
        # delta holds by construction; a loose tolerance only guards against
        # exp/log numerical failure
        return LoopConfig(self.params, self.points_at(xi), check=check, delta_tol=1e-6)

    def energy_at(self, xi: np.ndarray) -> float:
        return self.config_at(xi, check=False).energy

    def domain_margin(self, xi: np.ndarray) -> float:
        """rho^2 - sum_{i != 0} d_i^2 at the given coordinates (> 0 inside)."""
        cfg = self.config_at(xi, check=False)
        return cfg.params.model.rho**2 - float(np.sum(cfg.seg_dists[1:] ** 2))

    # -- analytic gradient ----------------------------------------------------

    def _dq1(self, a: np.ndarray, b: np.ndarray, h: float = 1e-5) -> np.ndarray:
        """Derivatives of q1 = exp_{q0(a)}(delta u(a,b)) w.r.t. (a, b) by
        central differences of the exponential map; shape (2n-1, d)."""
        model = self.params.model
        n = model.dim
        m = 2 * n - 1
        qs = np.empty((2 * m, model.ambient))
        vs = np.empty((2 * m, model.ambient))
        for j in range(m):
            for s, row in ((+1, 2 * j), (-1, 2 * j + 1)):
                aa, bb = a.copy(), b.copy()
                if j < n:
                    aa[j] += s * h
                else:
                    bb[j - n] += s * h
                q0j, uj = self._base_and_dir(aa, bb)
                qs[row] = q0j
                vs[row] = self.params.delta * uj
        ends = mf.exp_batch(model, qs, vs)
        return (ends[0::2] - ends[1::2]) / (2.0 * h)

    def gradient_at(self, xi: np.ndarray, broken: BrokenGeodesic | None = None):
        """Chart components of dE at xi, assembled from the one-sided velocity
        mismatches of the broken geodesic (first-variation formula)."""
        xi = np.asarray(xi, dtype=float)
        a, b, c = self._split(xi)
        model = self.params.model
        n = model.dim
        cfg = broken.config if broken is not None else self.config_at(xi, check=False)
        if broken is None:
            broken = reconstruct(cfg)
        pts = cfg.points
        # covectors: w -> g(m_i, w) with m_i = 2 (v_i^- - v_i^+)
        m_cov = np.einsum(
            "ijk,ik->ij", model.metric(pts), 2.0 * broken.mismatches()
        )  # (k, d)

        grad = np.empty(self.dim)
        # q0 block and u block (chain through q1)
        dq1 = self._dq1(a, b)  # (2n-1, d)
        y0 = self.q0 + self.frame0 @ a
        r0 = np.linalg.norm(y0)
        q0 = y0 / r0
        J0 = (self.frame0 - np.outer(q0, q0 @ self.frame0)) / r0  # (d, n)
        grad[:n] = m_cov[0] @ J0 + dq1[:n] @ m_cov[1]
        grad[n : 2 * n - 1] = dq1[n:] @ m_cov[1]
        # free points
        y = self.free + np.einsum("idn,in->id", self.frames_free, c)
        r = np.linalg.norm(y, axis=-1, keepdims=True)
        x = y / r
        J = (self.frames_free - x[..., None] * np.einsum(
            "id,idn->in", x, self.frames_free
        )[:, None, :]) / r[..., None]  # (k-2, d, n)
        grad[2 * n - 1 :] = np.einsum("id,idn->in", m_cov[2:], J).ravel()
        return grad

    def recentered(self, xi: np.ndarray) -> "PrimeChart":
        """New chart centered at the configuration reached from xi."""
        pts = self.points_at(xi)
        model = self.params.model
        u_new = mf.log_batch(model, pts[0][None], pts[1][None])[0] / self.params.delta
        return PrimeChart(self.params, pts[0], u_new, pts[2:])


# ---------------------------------------------------------------------------
# constructions


def sample_closed_geodesic(
    model: MetricModel,
    params: LoopParams,
    q0: np.ndarray,
    direction: np.ndarray,
    length: float,
) -> LoopConfig:
    """Configuration sampling a unit-speed closed geodesic of the given
    length: arc positions 0, delta, then equal steps of (length - delta)/(k-1).

    Requires k > k_threshold(length, delta, rho).
    """
    kbar = k_threshold(length, params.delta, model.rho)
    if not params.k > kbar:
        raise DomainError(
            f"k = {params.k} too small: need k > {kbar:g} for length {length:g}"
        )
    k, delta = params.k, params.delta
    s = np.empty(k)
    s[0] = 0.0
    s[1] = delta
    s[2:] = delta + np.arange(1, k - 1) * (length - delta) / (k - 1)
    q0 = np.asarray(q0, dtype=float)
    u = mf.project_tangent(q0, np.asarray(direction, dtype=float))
    u = u / float(model.gnorm(q0, u))
    if model.has_closed_form:
        pts, _ = model.exp_closed(q0[None], s[:, None] * u[None])
    else:
        xs, _ = mf.integrate_geodesics(model, q0[None], u[None], length, grid=s / length)
        pts = xs[:, 0]
    return LoopConfig(params, pts, delta_tol=1e-6)


def minimum_config(
    model: MetricModel, params: LoopParams, q0: np.ndarray, v0: np.ndarray
) -> LoopConfig:
    """Global minimizer determined by (q0, v0) with |v0|_g = delta: the curve
    runs out to q1 = exp_{q0}(v0) and retraces itself back."""
    q0 = np.asarray(q0, dtype=float)
    v0 = mf.project_tangent(q0, np.asarray(v0, dtype=float))
    nv = float(model.gnorm(q0, v0))
    if abs(nv - params.delta) > 1e-9:
        v0 = v0 * (params.delta / nv)
    k = params.k
    t = 1.0 - np.arange(k) / (k - 1)  # 1, ..., 0 over k points: q1 at t=1
    t = np.concatenate([[0.0], t[:-1]])  # q0, q1, then the walk back
    if model.has_closed_form:
        pts, _ = model.exp_closed(q0[None], t[:, None] * v0[None])
    else:
        pts = mf.exp_batch(model, np.broadcast_to(q0, (k, len(q0))).copy(),
                           t[:, None] * v0[None])
    return LoopConfig(params, pts, delta_tol=1e-6)


def random_config(
    model: MetricModel,
    params: LoopParams,
    rng: np.random.Generator,
    spread: float = 0.3,
) -> LoopConfig:
    """Random valid configuration: a global-minimum spine with tangent noise
    on the free points, shrunk until the domain constraint holds."""
    q0, u = mf.sample_unit_tangent(model, 1, rng)
    base = minimum_config(model, params, q0[0], params.delta * u[0])
    pts = base.points.copy()
    noise = mf.project_tangent(pts[2:], rng.standard_normal(pts[2:].shape))
    scale = spread
    for _ in range(30):
        trial = pts.copy()
        trial[2:] = trial[2:] + scale * noise
        trial /= np.linalg.norm(trial, axis=-1, keepdims=True)
        try:
            cfg = LoopConfig(params, trial)
        except DomainError:
            scale *= 0.5
            continue
        if np.sum(cfg.seg_dists[1:] ** 2) < 0.8 * model.rho**2 and np.all(
            cfg.seg_dists < 0.9 * model.rho
        ):
            return cfg
        scale *= 0.5
    return base
