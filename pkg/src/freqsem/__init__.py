"""Frequency-inspired convolution operators on a small deterministic tensor core."""
from . import ops
from ._backend import name as backend_name
from .errors import (ConfigError, ContractError, FreqsemError, IntegrityError, NumericError,
                     ShapeError)
from .tensor import GradTape, Tensor

__all__ = [
    "ConfigError", "ContractError", "FreqsemError", "GradTape", "IntegrityError",
    "NumericError", "ShapeError", "Tensor", "backend_name", "ops",
]
