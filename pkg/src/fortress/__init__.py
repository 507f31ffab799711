"""Deterministic desk-scale semantic segmentation toolkit.

A depthwise-separable encoder-decoder with attention-refined skips,
adaptive spline (KAN) enhancement, deep supervision, a tape-based numpy
autodiff engine, and a reproducible synthetic-data training pipeline.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigurationError,
    ContractError,
    DataError,
    FormatError,
    FortressError,
    NumericError,
)
from .model import FortressModel, ModelConfig, build, load, save
from .tensor import Tape, Tensor, backward, gradcheck
from .tikan import TiKANConfig
from .training import TrainConfig, fit

__all__ = [
    "ConfigurationError", "ContractError", "DataError", "FormatError",
    "FortressError", "NumericError", "FortressModel", "ModelConfig",
    "build", "load", "save", "Tape", "Tensor", "backward", "gradcheck",
    "TiKANConfig", "TrainConfig", "fit", "__version__",
]
