"""Exception hierarchy shared by every module of the laboratory."""

from typing import Any, Optional


class LabError(Exception):
    """Base class for all errors raised by the laboratory"""


class ConfigurationError(LabError):
    """Invalid law, invalid experiment configuration or unknown experiment id"""


class LawValidationError(ConfigurationError):
    """A law failed validation; ``report`` holds the full validation report"""

    def __init__(self, message: str, report: Any = None):
        super().__init__(message)
        self.report = report


class UnsupportedLawError(ConfigurationError):
    """The requested exact operation cannot be carried out for this law"""


class TruncationError(LabError):
    """A truncated computation could not reach its tolerance"""

    def __init__(self, message: str, achieved: Optional[float] = None):
        super().__init__(message)
        self.achieved = achieved


class DivergentRenewalError(LabError):
    """Renewal series diverges (ladder law is a point mass at zero)"""


class DomainError(LabError):
    """Argument outside the domain of the operation"""


class QuadratureError(LabError):
    """Quadrature did not reach the requested tolerance"""

    def __init__(self, message: str, estimate: Optional[float] = None, error: Optional[float] = None):
        super().__init__(message)
        self.estimate = estimate
        self.error = error


class UnsupportedOrderError(LabError):
    """Kac permutation sums are only enumerated up to a fixed order"""


class InsufficientSamplesError(LabError):
    """Not enough samples to form a statistic"""
