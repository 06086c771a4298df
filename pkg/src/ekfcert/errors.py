"""Exception hierarchy for the filter, certifier and simulation layers."""

from __future__ import annotations


class EkfCertError(Exception):
    """Base class for all package-specific failures."""


class ConfigurationError(EkfCertError):
    """Invalid user-supplied configuration: shapes, signs, definiteness, names."""


class ModelEvaluationError(EkfCertError):
    """A model callback produced a non-finite or ill-shaped value."""


class PreconditionError(EkfCertError):
    """An operation's stated precondition does not hold for these inputs."""


class DivergenceError(EkfCertError):
    """An integrated state left the finite range; carries the failure time."""

    def __init__(self, message: str, time: float | None = None):
        super().__init__(message)
        self.time = time


class CovarianceBoundViolation(EkfCertError):
    """The covariance lost positive definiteness; carries the failure time.

    All downstream guarantees are conditioned on uniform eigenvalue bounds
    for P(t), so this is surfaced as an error rather than silently
    projected away.
    """

    def __init__(self, message: str, time: float | None = None):
        super().__init__(message)
        self.time = time
