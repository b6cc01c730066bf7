"""Residual 1D convolutional network for epileptic EEG classification."""
from .model import ResCnnConfig, ResCnnModel, build_model, count_params, model_backward, model_forward
from .tensor import Rng

__version__ = "0.1.0"

__all__ = [
    "ResCnnConfig",
    "ResCnnModel",
    "Rng",
    "build_model",
    "count_params",
    "model_backward",
    "model_forward",
]
