"""Hand-rolled tensor layers, the embedding network, its loss, and training."""

from .losses import OcSoftmaxHead, oc_softmax_loss
from .optim import AdamW
from .xresnet import (
    TrainingBatch,
    XResNetConfig,
    XResNetModel,
    backward,
    build_xresnet,
    extract_embeddings,
    forward,
)
from .training import TrainSettings, format_history, train

__all__ = [
    "AdamW",
    "OcSoftmaxHead",
    "TrainSettings",
    "TrainingBatch",
    "XResNetConfig",
    "XResNetModel",
    "backward",
    "build_xresnet",
    "extract_embeddings",
    "format_history",
    "forward",
    "oc_softmax_loss",
    "train",
]
