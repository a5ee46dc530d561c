"""Autoencoder compression of mesh field series."""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .metrics import (
    GridGradient,
    loss,
    max_error,
    pod_baseline,
    pod_error,
    pod_project,
    relative_error,
    resolve_lambda,
    split_dataset,
)
from .model import AutoencoderConfig, QCAutoencoder, compression_ratio, decode, encode, reconstruct
from .training import TrainResult, evaluate, train

__all__ = [
    "AutoencoderConfig",
    "Checkpoint",
    "GridGradient",
    "QCAutoencoder",
    "TrainResult",
    "compression_ratio",
    "decode",
    "encode",
    "evaluate",
    "load_checkpoint",
    "loss",
    "max_error",
    "pod_baseline",
    "pod_error",
    "pod_project",
    "reconstruct",
    "relative_error",
    "resolve_lambda",
    "save_checkpoint",
    "split_dataset",
    "train",
]
