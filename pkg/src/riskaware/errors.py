"""Exception types shared across the toolkit."""

from __future__ import annotations


class RiskAwareError(Exception):
    """Base class for toolkit errors."""


class InvalidInputError(RiskAwareError, ValueError):
    """Input violates a documented precondition (non-finite, asymmetric, out of support)."""


class QuadratureError(RiskAwareError, ArithmeticError):
    """Adaptive quadrature hit its subdivision limit before meeting the tolerance.

    ``estimate`` and ``error`` carry the best result obtained so far.
    """

    def __init__(self, message, estimate=None, error=None):
        super().__init__(message)
        self.estimate = estimate
        self.error = error


class PosteriorError(RiskAwareError):
    """A posterior summary could not be computed for one observation."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class NumericFailure(RiskAwareError, ArithmeticError):
    """A computed estimate is not finite."""


class ConsistencyError(RiskAwareError):
    """Two independent evaluation routes disagree beyond tolerance."""


class InfeasibleError(RiskAwareError):
    """The sev budget is below the smallest attainable sev."""

    def __init__(self, message, sev_min=None):
        super().__init__(message)
        self.sev_min = sev_min


class UnavailableError(RiskAwareError):
    """A quantity is undefined for this model (missing rho_min, zero skewness, ...)."""


class ConfigError(RiskAwareError, ValueError):
    """Experiment configuration could not be parsed or validated."""
