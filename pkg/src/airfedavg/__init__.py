"""Over-the-air federated averaging: bounds, power control, latency and simulation."""

from .bound import ChannelRealization, PowerSchedule, air_gap_bound, error_free_bound, oma_gap_bound
from .constants import LearningConstants, RateSchedule, SystemConfig, estimate_constants_from_data
from .errors import (
    AirFedAvgError,
    ConfigError,
    DenoisingUndefinedError,
    InfeasibleTargetError,
    NumericalError,
)
from .power_control import optimize

__version__ = "0.1.0"

__all__ = [
    "AirFedAvgError",
    "ChannelRealization",
    "ConfigError",
    "DenoisingUndefinedError",
    "InfeasibleTargetError",
    "LearningConstants",
    "NumericalError",
    "PowerSchedule",
    "RateSchedule",
    "SystemConfig",
    "air_gap_bound",
    "error_free_bound",
    "estimate_constants_from_data",
    "oma_gap_bound",
    "optimize",
]
