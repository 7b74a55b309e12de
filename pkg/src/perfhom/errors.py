"""Exception hierarchy shared by all perfhom modules."""


class PerfhomError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(PerfhomError):
    """An argument lies outside the mathematical domain of an operation."""


class ConfigError(PerfhomError):
    """Invalid configuration (law parameters, grid policy, CLI config file)."""


class QuadratureFailure(PerfhomError):
    """Adaptive quadrature did not reach the requested tolerance."""


class ResolutionError(PerfhomError):
    """A hole cannot be resolved on the current grid.

    Carries the minimal number of subdivisions that would resolve it, so
    callers can either refine or fall back to the nearest-node strategy.
    """

    def __init__(self, message, min_subdivisions=None):
        super().__init__(message)
        self.min_subdivisions = min_subdivisions


class BracketError(PerfhomError):
    """Bisection bracket endpoints do not straddle the threshold."""

    def __init__(self, message, lo_estimate=None, hi_estimate=None):
        super().__init__(message)
        self.lo_estimate = lo_estimate
        self.hi_estimate = hi_estimate


class SolverError(PerfhomError):
    """Base class for minimization failures."""


class LineSearchFailure(SolverError):
    """Backtracking line search could not find a decreasing step."""


class NonfiniteObjective(SolverError):
    """The objective or its gradient became NaN/Inf."""
