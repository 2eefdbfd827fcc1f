"""Exception hierarchy shared by all geocrit modules."""


class GeocritError(Exception):
    """Base class for all geocrit errors."""


class DomainError(GeocritError):
    """Input left the validity region (injectivity radius, parameter range)."""


class IntegratorFailure(GeocritError):
    """Adaptive step control could not meet the requested tolerance."""


class ConvergenceFailure(GeocritError):
    """An iterative solve (Newton shooting, refinement) stalled."""


class MaxIterations(ConvergenceFailure):
    """Iteration budget exhausted before reaching tolerance."""


class BoundaryEscape(GeocritError):
    """A search iterate left the open loop-space domain."""


class UnclassifiableCritical(GeocritError):
    """Velocity pattern at a converged point matches no admissible kind."""


class InconclusiveScan(GeocritError):
    """Too many integrator failures for a scan verdict to be meaningful."""
