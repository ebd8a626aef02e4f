"""Exception types shared across the package."""


class AirFedAvgError(Exception):
    """Base class for all package errors."""


class ConfigError(AirFedAvgError, ValueError):
    """A configuration or input violates a stated invariant."""


class DenoisingUndefinedError(AirFedAvgError, ArithmeticError):
    """All effective transmit amplitudes are zero, so no denoising factor exists."""


class InfeasibleTargetError(AirFedAvgError):
    """The requested optimality-gap target cannot be met within the search range."""

    def __init__(self, message, best_bound=float("nan")):
        super().__init__(message)
        self.best_bound = best_bound


class NumericalError(AirFedAvgError, ArithmeticError):
    """An internal numerical routine failed to converge or bracket a root."""
