"""Besse/Zoll scans, evaluation-map coverage, and min-max gap reports.

A metric is Besse when every unit-speed geodesic is closed, Zoll when they
all share the same minimal period.  A sample-based scan cannot certify
either property; the verdicts below are statements about the sampled
directions only.  The coverage test probes whether the critical set at the
lowest nontrivial energy level evaluates onto all of the unit tangent
bundle: a coverage gap forces the two min-max values to separate, while
full coverage together with a Zoll scan is consistent with their equality.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import critical as cr
from . import loopspace as ls
from . import manifold as mf
from .critical import Kind, SearchConfig
from .errors import DomainError, InconclusiveScan
from .loopspace import LoopParams
from .manifold import MetricModel

__all__ = [
    "DiagnosticReport",
    "besse_zoll_scan",
    "ev_coverage",
    "minmax_gap_report",
]


@dataclass(frozen=True)
class DiagnosticReport:
    """Scan and coverage results; None fields were not computed."""

    verdict: str  # "Zoll", "Besse", or "NonBesse"
    period: float | None  # common (minimal or least common) period, if any
    closure_fraction: float
    period_clusters: list  # [(center, count), ...] sorted by center
    n_samples: int
    seed: int
    lowest_critical_energy: float | None = None
    lowest_critical_kind: str | None = None
    geodesic_period: float | None = None  # sqrt(E) or sqrt(E) - 2 delta
    coverage_fraction: float | None = None
    uncovered: list = field(default_factory=list)  # [(q, u), ...] misses
    summary: str = ""

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "period": self.period,
            "closure_fraction": self.closure_fraction,
            "period_clusters": [
                {"center": c, "count": n} for c, n in self.period_clusters
            ],
            "n_samples": self.n_samples,
            "seed": self.seed,
            "lowest_critical_energy": self.lowest_critical_energy,
            "lowest_critical_kind": self.lowest_critical_kind,
            "geodesic_period": self.geodesic_period,
            "coverage_fraction": self.coverage_fraction,
            "uncovered": [
                {"point": q.tolist(), "direction": u.tolist()}
                for q, u in self.uncovered
            ],
            "summary": self.summary,
        }

    def csv_row(self) -> list:
        """One-line summary for batch sweeps."""
        return [
            self.verdict,
            self.period if self.period is not None else "",
            self.closure_fraction,
            self.n_samples,
            self.lowest_critical_energy if self.lowest_critical_energy is not None else "",
            self.coverage_fraction if self.coverage_fraction is not None else "",
            len(self.uncovered),
            self.summary,
        ]


def _cluster_periods(periods: np.ndarray, gap: float) -> list[tuple[float, int]]:
    """Single-linkage 1-d clustering: split at gaps wider than `gap`."""
    if len(periods) == 0:
        return []
    srt = np.sort(periods)
    cuts = np.flatnonzero(np.diff(srt) > gap)
    out = []
    start = 0
    for cut in list(cuts) + [len(srt) - 1]:
        chunk = srt[start : cut + 1]
        out.append((float(np.mean(chunk)), int(len(chunk))))
        start = cut + 1
    return out


def _common_multiple(centers: list[float], tol: float) -> float | None:
    """Least common multiple of the cluster centers within tol, if one
    exists under a small multiplier bound."""
    top = max(centers)
    for mult in range(1, 13):
        L = mult * top
        if all(
            abs(L / c - round(L / c)) * c < max(10 * tol, 1e-6 * L) for c in centers
        ):
            return L
    return None


def besse_zoll_scan(
    model: MetricModel,
    n_samples: int = 200,
    t_max: float = 20.0,
    tol: float = 1e-6,
    seed: int = 0,
    residual_tol: float = 1e-6,
    batch: int = 50,
) -> DiagnosticReport:
    """Sample unit tangent directions and test each geodesic for closure.

    Verdicts: Zoll when every sample closes and the minimal periods form a
    single cluster; Besse when every sample closes but with several period
    clusters sharing a common multiple; NonBesse otherwise.
    """
    rng = np.random.default_rng(seed)
    q, u = mf.sample_unit_tangent(model, n_samples, rng)
    periods = np.full(n_samples, np.nan)
    residuals = np.full(n_samples, np.inf)
    failures = 0
    for lo in range(0, n_samples, batch):
        hi = min(lo + batch, n_samples)
        try:
            res = mf.detect_closure_batch(model, q[lo:hi], u[lo:hi], t_max, tol=tol)
        except Exception:
            failures += hi - lo
            continue
        periods[lo:hi] = res.periods
        residuals[lo:hi] = res.residuals
        failures += res.failures
    if failures > 0.01 * n_samples:
        raise InconclusiveScan(
            f"{failures} integrator failures out of {n_samples} samples"
        )
    closed = np.isfinite(periods) & (residuals < residual_tol)
    frac = float(np.mean(closed))
    clusters = _cluster_periods(periods[closed], gap=10.0 * tol)
    if frac == 1.0 and len(clusters) == 1:
        verdict, period = "Zoll", clusters[0][0]
    elif frac == 1.0 and clusters:
        period = _common_multiple([c for c, _ in clusters], tol)
        verdict = "Besse" if period is not None else "NonBesse"
    else:
        verdict, period = "NonBesse", None
    return DiagnosticReport(
        verdict=verdict,
        period=period,
        closure_fraction=frac,
        period_clusters=clusters,
        n_samples=n_samples,
        seed=seed,
    )


def ev_coverage(
    model: MetricModel,
    params: LoopParams,
    level: float,
    n_grid: int,
    search: SearchConfig,
    cone_half_angle: float = 0.2,
    angle_tol: float = 0.05,
    level_rtol: float = 1e-3,
) -> tuple[float, list]:
    """Fraction of sampled (q, u) in SM hit by the evaluation map of the
    critical set at the given energy level.

    Each grid sample runs a pinned search (base point frozen, direction free
    inside a cone around u); a hit needs convergence at the level with the
    normalized evaluation direction within angle_tol of u.  Returns the hit
    fraction and the missed (q, u) witnesses.
    """
    if n_grid < 1:
        raise DomainError("grid size must be at least 1")
    rng = np.random.default_rng(search.seed)
    qs, us = mf.sample_unit_tangent(model, n_grid, rng)
    delta = params.delta
    length = float(np.sqrt(level))  # smooth target
    length_z = length - 2.0 * delta  # underlying period if the level is zig-zag
    # critical points at this level through (q, u) ride closed geodesics, so
    # one batched closure scan prunes the grid before any refinement
    scan = mf.detect_closure_batch(model, qs, us, t_max=1.1 * length)
    hits = 0
    misses: list = []
    for i, (q0, u) in enumerate(zip(qs, us)):
        ok = False
        p = scan.periods[i]
        if np.isfinite(p) and scan.residuals[i] <= 1e-6:
            for target, zig in ((length, False), (length_z, True)):
                if target <= 2.0 * delta:
                    continue
                if zig and not params.k > ls.k_threshold(
                    target + 2.0 * delta, delta, model.rho
                ):
                    continue
                m = target / p
                if round(m) < 1 or abs(m - round(m)) * p > 1e-3:
                    continue
                try:
                    if zig:
                        pts = cr._zigzag_points(model, params, q0, u, target)
                        cfg = ls.LoopConfig(params, pts, delta_tol=1e-6)
                    else:
                        cfg = ls.sample_closed_geodesic(model, params, q0, u, target)
                    cp = cr.refine(cfg, search, pin_base=True,
                                   cone=(u, cone_half_angle))
                except Exception:
                    continue
                if abs(cp.energy - level) > level_rtol * level:
                    continue
                ev_dir = cp.ev.vector / delta
                cosang = float(model.inner(q0, ev_dir, u)) / (
                    float(model.gnorm(q0, ev_dir)) * float(model.gnorm(q0, u))
                )
                ang = float(np.arccos(np.clip(cosang, -1.0, 1.0)))
                if ang > angle_tol:
                    continue
                # only the pinned gradient vanished; require the rest too
                chart = ls.PrimeChart.from_config(cp.config)
                g_full = chart.gradient_at(np.zeros(chart.dim))
                if np.linalg.norm(g_full) < 1e-5:
                    ok = True
                    break
        if ok:
            hits += 1
        else:
            misses.append((np.asarray(q0), np.asarray(u)))
    return hits / n_grid, misses


def minmax_gap_report(
    model: MetricModel,
    params: LoopParams,
    search: SearchConfig,
    n_scan: int = 200,
    t_max: float = 20.0,
    n_grid: int = 40,
    scan_tol: float = 1e-6,
) -> DiagnosticReport:
    """Combined report: closure scan, lowest nontrivial critical level, and
    evaluation-map coverage at that level.

    Full coverage plus a Zoll scan is consistent with the two min-max values
    coinciding at the square of the common period; a coverage gap means they
    must separate.
    """
    scan = besse_zoll_scan(model, n_scan, t_max, tol=scan_tol, seed=search.seed)
    margin = max(10.0 * params.delta**2, 1e-3)
    found = cr.multistart(
        model, params, search, window=(4.0 * params.delta**2 + margin, ls.sup_energy(params))
    )
    if not found:
        return DiagnosticReport(
            verdict=scan.verdict,
            period=scan.period,
            closure_fraction=scan.closure_fraction,
            period_clusters=scan.period_clusters,
            n_samples=scan.n_samples,
            seed=search.seed,
            summary="no nontrivial critical points found; coverage not run",
        )
    low = found[0]
    if low.kind is Kind.ZIGZAG:
        geo_period = float(np.sqrt(low.energy) - 2.0 * params.delta)
    else:
        geo_period = float(np.sqrt(low.energy))
    frac, misses = ev_coverage(model, params, low.energy, n_grid, search)
    if frac == 1.0 and scan.verdict == "Zoll":
        summary = (
            "full coverage and Zoll scan: consistent with equal min-max "
            f"values at the critical level {low.energy:.9g}"
        )
    elif frac < 1.0:
        summary = (
            f"coverage gap ({len(misses)} of {n_grid} samples missed): "
            "the two min-max values must separate"
        )
    else:
        summary = "full coverage but non-Zoll scan; verdicts disagree"
    return DiagnosticReport(
        verdict=scan.verdict,
        period=scan.period,
        closure_fraction=scan.closure_fraction,
        period_clusters=scan.period_clusters,
        n_samples=scan.n_samples,
        seed=search.seed,
        lowest_critical_energy=low.energy,
        lowest_critical_kind=low.kind.value,
        geodesic_period=geo_period,
        coverage_fraction=frac,
        uncovered=misses,
        summary=summary,
    )
