"""Sequential vs. parallel (flattened) residual CNNs, trained deterministically."""

from .data import Dataset, batches, class_histogram, load_cifar10, load_dataset, load_mnist
from .estimator import ResidualConvClassifier
from .model import (
    ArchitectureSpec,
    ModelParams,
    backward,
    build_model,
    forward,
    overdetermination_ratio,
    parameter_count,
)
from .train import EpochMetrics, TrainConfig, evaluate, rmsprop_step, train

__version__ = "0.1.0"

__all__ = [
    "ArchitectureSpec", "Dataset", "EpochMetrics", "ModelParams", "ResidualConvClassifier",
    "TrainConfig", "backward", "batches", "build_model", "class_histogram", "evaluate",
    "forward", "load_cifar10", "load_dataset", "load_mnist", "overdetermination_ratio",
    "parameter_count", "rmsprop_step", "train",
]
