"""Selective state-space models for wearable human activity recognition."""

from .errors import (BabyMambaError, ConfigError, ContractError, DataError, EvaluationError, FormatError,
                     NumericError, ProtocolError, SchemaError, ShapeError)
from .model import Model, ModelConfig, build, count_macs, count_params, load, save
from .optim import TrainConfig, fit
from .presets import PRESETS, get_preset

__version__ = "0.1.0"

__all__ = [
    "BabyMambaError", "ConfigError", "ContractError", "DataError", "EvaluationError", "FormatError",
    "NumericError", "ProtocolError", "SchemaError", "ShapeError",
    "Model", "ModelConfig", "build", "count_macs", "count_params", "load", "save",
    "TrainConfig", "fit", "PRESETS", "get_preset",
]
