"""Hybrid quantum-classical neural network toolkit for binary thermographic
image classification: a float64 autodiff tensor engine, an exact statevector
simulator for the 4-qubit variational circuit, the full model, and the
training/evaluation protocol."""

from .errors import (
    ConfigError,
    ContractError,
    DataError,
    DimensionError,
    DivergenceError,
    HqnnError,
)
from .model import HQNNModel, ModelConfig, load_checkpoint, save_checkpoint
from .qsim import QuantumLayerParams, circuit_forward, circuit_gradient
from .tensor import Tensor
from .training import TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ContractError",
    "DataError",
    "DimensionError",
    "DivergenceError",
    "HqnnError",
    "HQNNModel",
    "ModelConfig",
    "QuantumLayerParams",
    "Tensor",
    "TrainConfig",
    "circuit_forward",
    "circuit_gradient",
    "evaluate",
    "load_checkpoint",
    "save_checkpoint",
    "train",
    "__version__",
]
