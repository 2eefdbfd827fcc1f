"""Second-order analysis at critical points.

The Hessian is assembled by central differences of the analytic chart
gradient (one order better conditioned than second differences of the
energy).  Index and kernel counts use a relative zero threshold with an
explicit spectral-gap warning: degenerate critical manifolds make the zero
cluster physical, so silent misclassification is worse than a warning.

An independent oracle is provided by the classical broken-geodesic energy
on uniform breakpoints, F(p) = sum d(p_i, p_{i+1})^2 / (theta_{i+1} -
theta_i), whose index/kernel at a sampled closed geodesic must agree with
the loop-space counts.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import loopspace as ls
from . import manifold as mf
from .critical import CriticalPoint
from .errors import DomainError
from .loopspace import PrimeChart
from .manifold import MetricModel

__all__ = [
    "SpectralReport",
    "hessian",
    "index_nullity",
    "iterate_index_expected",
    "iterate_nullity_expected",
    "uniform_discretization_index",
    "sample_geodesic_uniform",
]


@dataclass(frozen=True)
class SpectralReport:
    """Eigenvalue bookkeeping of a symmetric Hessian."""

    eigenvalues: np.ndarray  # ascending
    index: int
    kernel_dim: int
    positive: int
    zero_tol: float
    gap: float  # smallest |eigenvalue| outside the zero cluster
    asymmetry: float = 0.0  # relative asymmetry before symmetrization

    @property
    def dim(self) -> int:
        return len(self.eigenvalues)

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "kernel_dim": self.kernel_dim,
            "positive": self.positive,
            "zero_tol": self.zero_tol,
            "gap": self.gap,
            "asymmetry": self.asymmetry,
            "eigenvalues": self.eigenvalues.tolist(),
        }


def _fd_hessian(grad, dim: int, step: float, workers: int = 1):
    """Central-difference Jacobian of a gradient callable, symmetrized.

    Returns (H, relative asymmetry before symmetrization)."""

    def column(j):
        e = np.zeros(dim)
        e[j] = step
        return (grad(e) - grad(-e)) / (2.0 * step)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            cols = list(pool.map(column, range(dim)))
    else:
        cols = [column(j) for j in range(dim)]
    H = np.stack(cols, axis=1)
    scale = np.max(np.abs(H)) or 1.0
    asym = float(np.max(np.abs(H - H.T)) / scale)
    return 0.5 * (H + H.T), asym


def hessian(
    cp: CriticalPoint,
    step: float = 1e-4,
    workers: int = 1,
    full_output: bool = False,
):
    """Hessian of the energy at a critical point, in chart coordinates.

    Requires an actually converged point (gradient norm below 1e-6); the
    finite-difference stencil is meaningless further from criticality.
    """
    if cp.grad_norm >= 1e-6:
        raise DomainError(
            f"hessian needs gradient norm < 1e-6, got {cp.grad_norm:.3g}"
        )
    chart = PrimeChart.from_config(cp.config)
    H, asym = _fd_hessian(chart.gradient_at, chart.dim, step, workers)
    if asym > 1e-5:
        warnings.warn(
            f"Hessian asymmetry {asym:.2e} before symmetrization", stacklevel=2
        )
    if full_output:
        return H, asym
    return H


def index_nullity(H: np.ndarray, zero_tol: float = 1e-4,
                  asymmetry: float = 0.0) -> SpectralReport:
    """Count negative / near-zero / positive eigenvalues of a symmetric H.

    zero_tol is relative to the largest |eigenvalue|.  Warns when the
    spectral gap around the zero cluster is thinner than 10x the threshold:
    the counts are then sensitive to the tolerance choice.
    """
    lam = np.linalg.eigvalsh(0.5 * (H + H.T))
    scale = float(np.max(np.abs(lam))) or 1.0
    cut = zero_tol * scale
    index = int(np.sum(lam < -cut))
    kernel = int(np.sum(np.abs(lam) <= cut))
    positive = len(lam) - index - kernel
    outside = np.abs(lam[np.abs(lam) > cut])
    gap = float(np.min(outside)) if len(outside) else np.inf
    if gap < 10.0 * cut:
        warnings.warn(
            f"spectral gap {gap:.3e} within 10x the zero threshold "
            f"{cut:.3e}; index/kernel counts may be tolerance-sensitive",
            stacklevel=2,
        )
    return SpectralReport(lam, index, kernel, positive, zero_tol, gap, asymmetry)


def iterate_index_expected(i_prime: int, m: int, n: int) -> int:
    """Index of the m-th iterate of a closed geodesic on a Besse n-sphere:
    m * i_prime + (m - 1) * (n - 1)."""
    if m < 1 or n < 2:
        raise DomainError("need m >= 1 and n >= 2")
    return m * i_prime + (m - 1) * (n - 1)


def iterate_nullity_expected(n: int) -> int:
    """Nullity of every iterate in the Besse case: 2n - 2 (excluding the
    circle direction; the measured kernel of the discretized energy is one
    larger, 2n - 1, the tangent space of the critical manifold)."""
    if n < 2:
        raise DomainError("need n >= 2")
    return 2 * n - 2


# ---------------------------------------------------------------------------
# uniform broken-geodesic oracle


class _UniformChart:
    """All-points-free chart for F(p) = sum d(p_i, p_{i+1})^2 / dtheta_i."""

    def __init__(self, model: MetricModel, points: np.ndarray, thetas: np.ndarray):
        self.model = model
        self.points = np.asarray(points, dtype=float)
        self.thetas = np.asarray(thetas, dtype=float)
        self.k = len(self.points)
        if len(self.thetas) != self.k + 1:
            raise DomainError("need k+1 breakpoint times (theta_k closes the loop)")
        self.dtheta = np.diff(self.thetas)
        if np.any(self.dtheta <= 0):
            raise DomainError("breakpoint times must be strictly increasing")
        self.frames = mf.tangent_frame(self.points)  # (k, d, n)
        self.dim = self.k * model.dim

    def points_at(self, xi: np.ndarray) -> np.ndarray:
        c = xi.reshape(self.k, self.model.dim)
        y = self.points + np.einsum("idn,in->id", self.frames, c)
        return y / np.linalg.norm(y, axis=-1, keepdims=True)

    def value_at(self, xi: np.ndarray) -> float:
        pts = self.points_at(xi)
        seg = mf.dist_batch(self.model, pts, np.roll(pts, -1, axis=0))
        if np.any(seg >= self.model.rho):
            raise DomainError("consecutive samples left the injectivity radius")
        return float(np.sum(seg**2 / self.dtheta))

    def gradient_at(self, xi: np.ndarray) -> np.ndarray:
        pts = self.points_at(xi)
        model = self.model
        logs_fw = mf.log_batch(model, pts, np.roll(pts, -1, axis=0))
        logs_bw = mf.log_batch(model, pts, np.roll(pts, 1, axis=0))
        v_plus = logs_fw / self.dtheta[:, None]
        v_minus = -logs_bw / np.roll(self.dtheta, 1)[:, None]
        m_cov = np.einsum("ijk,ik->ij", model.metric(pts), 2.0 * (v_minus - v_plus))
        # chain through the normalization of each moved point
        y = self.points + np.einsum(
            "idn,in->id", self.frames, xi.reshape(self.k, model.dim)
        )
        r = np.linalg.norm(y, axis=-1, keepdims=True)
        x = y / r
        J = (self.frames - x[..., None] * np.einsum(
            "id,idn->in", x, self.frames
        )[:, None, :]) / r[..., None]
        return np.einsum("id,idn->in", m_cov, J).ravel()


def sample_geodesic_uniform(
    model: MetricModel,
    q0: np.ndarray,
    direction: np.ndarray,
    length: float,
    k: int,
) -> tuple[np.ndarray, np.ndarray]:
    """k uniform samples of a unit-speed closed geodesic and their k+1 times."""
    if k < 3:
        raise DomainError("need at least 3 samples")
    if length / k >= model.rho:
        raise DomainError("sample spacing must stay below the injectivity radius")
    q0 = np.asarray(q0, dtype=float)
    u = mf.project_tangent(q0, np.asarray(direction, dtype=float))
    u = u / float(model.gnorm(q0, u))
    s = np.arange(k) / k
    if model.has_closed_form:
        pts, _ = model.exp_closed(q0[None], (length * s)[:, None] * u[None])
    else:
        xs, _ = mf.integrate_geodesics(model, q0[None], u[None], length, grid=s)
        pts = xs[:, 0]
    thetas = np.concatenate([s, [1.0]]) * length
    return pts, thetas


def uniform_discretization_index(
    model: MetricModel,
    points: np.ndarray,
    thetas: np.ndarray,
    zero_tol: float = 1e-4,
    step: float = 1e-4,
    workers: int = 1,
) -> SpectralReport:
    """Index/kernel of the classical broken-geodesic energy at a sampled
    closed geodesic — the independent oracle for the loop-space counts."""
    chart = _UniformChart(model, points, thetas)
    g0 = chart.gradient_at(np.zeros(chart.dim))
    if np.linalg.norm(g0) > 1e-5 * max(1.0, chart.value_at(np.zeros(chart.dim))):
        warnings.warn(
            f"uniform discretization not critical: |grad| = {np.linalg.norm(g0):.3g}",
            stacklevel=2,
        )
    H, asym = _fd_hessian(chart.gradient_at, chart.dim, step, workers)
    return index_nullity(H, zero_tol, asymmetry=asym)
