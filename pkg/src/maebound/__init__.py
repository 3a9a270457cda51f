"""Error-bound toolkit for deep vector-to-vector regression trained with MAE."""
from .bounds import (
    BoundInputs,
    BoundReport,
    Calibration,
    OptErrorInputs,
    approximation_error_bound,
    calibrate,
    estimation_error_bound,
    hoeffding_deviation,
    mae_upper_bound,
    optimization_error_bound,
)
from .errors import (
    CapabilityError,
    ConfigError,
    DegenerateAnchorError,
    DimensionError,
    FormatError,
    MaeBoundError,
    ModeError,
    NumericError,
    ParameterError,
)
from .network import Network, NetworkSpec, backprop_mae, forward, init_network, renormalize
from .numerics import Rng
from .training import TrainConfig, TrainLog, mae_loss, mse_loss, train

__version__ = "0.1.0"

__all__ = [
    "BoundInputs",
    "BoundReport",
    "Calibration",
    "CapabilityError",
    "ConfigError",
    "DegenerateAnchorError",
    "DimensionError",
    "FormatError",
    "MaeBoundError",
    "ModeError",
    "Network",
    "NetworkSpec",
    "NumericError",
    "OptErrorInputs",
    "ParameterError",
    "Rng",
    "TrainConfig",
    "TrainLog",
    "approximation_error_bound",
    "backprop_mae",
    "calibrate",
    "estimation_error_bound",
    "forward",
    "hoeffding_deviation",
    "init_network",
    "mae_loss",
    "mae_upper_bound",
    "mse_loss",
    "optimization_error_bound",
    "renormalize",
    "train",
]
