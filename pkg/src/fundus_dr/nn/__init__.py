"""A small NumPy convolutional network with exact backpropagation."""

from .model import (
    Conv,
    Dense,
    Dropout,
    Flatten,
    MaxPool,
    Model,
    NetworkConfig,
    ReLU,
    SoftmaxOutput,
    load_model,
    save_model,
)
from .train import History, TrainConfig, TrainingDivergedError, grad_check, predict, train

__all__ = [
    "Conv", "Dense", "Dropout", "Flatten", "MaxPool", "Model", "NetworkConfig", "ReLU",
    "SoftmaxOutput", "load_model", "save_model", "History", "TrainConfig",
    "TrainingDivergedError", "grad_check", "predict", "train",
]
