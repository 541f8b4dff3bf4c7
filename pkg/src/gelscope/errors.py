"""Exception types raised across gelscope."""


class GelscopeError(Exception):
    """Base class for all package errors."""


class DomainError(GelscopeError, ValueError):
    """An argument lies outside the domain where a formula is defined."""


class ParseError(GelscopeError, ValueError):
    """A kernel string, spectrum string or config file could not be parsed."""


class NotApplicableError(GelscopeError):
    """The requested check does not apply to this object."""


class ToleranceNotMetError(GelscopeError):
    """A numerical refinement stopped before reaching its tolerance."""

    def __init__(self, message, interval=None, estimate=None):
        super().__init__(message)
        self.interval = interval
        self.estimate = estimate


class UndecidableConvergenceError(GelscopeError):
    """Convergence of an improper integral cannot be decided from kernel metadata."""


class HypothesisError(GelscopeError, ValueError):
    """Initial data violate the hypotheses of a bound."""


class StiffnessError(GelscopeError, RuntimeError):
    """The adaptive integrator's step size underflowed."""

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


class ConfigError(GelscopeError, ValueError):
    """A run configuration failed validation."""
