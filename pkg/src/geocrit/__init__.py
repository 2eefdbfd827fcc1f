"""Closed geodesics on spheres through a finite-dimensional loop space.

Configurations are k-tuples of points whose first segment has a fixed
length delta; their energy has a closed form whose critical points are the
closed geodesics of the metric (smooth or zig-zag) plus a manifold of
global minima.  The package finds and classifies these critical points,
computes Morse indices and kernel dimensions, and runs sample-based
Besse/Zoll and evaluation-map coverage diagnostics.
"""

from .errors import (
    BoundaryEscape,
    ConvergenceFailure,
    DomainError,
    GeocritError,
    InconclusiveScan,
    IntegratorFailure,
    MaxIterations,
    UnclassifiableCritical,
)
from .manifold import (
    Ellipsoid,
    MetricModel,
    RevolutionZoll,
    RoundSphere,
    TangentVector,
    detect_closure,
    dist,
    exp_map,
    find_closed_geodesic,
    geodesic_shoot,
    log_map,
    make_model,
)
from .loopspace import (
    BrokenGeodesic,
    LoopConfig,
    LoopParams,
    PrimeChart,
    k_threshold,
    minimum_config,
    random_config,
    sample_closed_geodesic,
    sup_energy,
)
from .critical import (
    CriticalPoint,
    Kind,
    SearchConfig,
    classify,
    find_through_point,
    make_zigzag,
    multistart,
    refine,
)
from .morse import (
    SpectralReport,
    hessian,
    index_nullity,
    iterate_index_expected,
    iterate_nullity_expected,
    uniform_discretization_index,
)
from .diagnostics import (
    DiagnosticReport,
    besse_zoll_scan,
    ev_coverage,
    minmax_gap_report,
)

__version__ = "0.1.0"
