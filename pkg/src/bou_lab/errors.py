"""Exception hierarchy shared across the library.

The CLI maps these onto exit codes: config problems exit 2, resource caps
exit 3, statistical failures exit 1.
"""


class BouLabError(Exception):
    """Base class for all library errors."""


class ParameterError(BouLabError, ValueError):
    """Invalid numeric argument (negative dt, non-finite position, ...)."""


class RegimeError(BouLabError, ValueError):
    """Operation called outside the branching regime it is defined for."""


class AmbiguousRegimeError(RegimeError):
    """Parameters too close to the critical boundary to classify safely."""


class UnsupportedError(BouLabError, ValueError):
    """Request outside the supported domain (e.g. moments for p < 1)."""


class ToleranceError(BouLabError, RuntimeError):
    """Numerical routine could not meet the requested tolerance.

    Carries the best available estimate(s) so callers can inspect them.
    """

    def __init__(self, message, estimate=None, error_estimate=None):
        super().__init__(message)
        self.estimate = estimate
        self.error_estimate = error_estimate


class ResourceLimitError(BouLabError, RuntimeError):
    """Population cap exceeded; reports how far the simulation got."""

    def __init__(self, message, time_reached=None, replica_id=None):
        super().__init__(message)
        self.time_reached = time_reached
        self.replica_id = replica_id


class SampleSizeError(BouLabError, ValueError):
    """Too few samples for the requested statistical procedure."""


class ConfigError(BouLabError, ValueError):
    """Malformed or inconsistent experiment configuration."""
