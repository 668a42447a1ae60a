"""Losses, the learning-rate schedule, Adam and the training loop."""

from mbanet.training.config import TrainConfig
from mbanet.training.loop import METRIC_COLUMNS, TrainResult, classification_accuracy, train_loop
from mbanet.training.loss import SMOOTHING_VARIANTS, smoothed_cross_entropy, smoothed_targets, total_loss
from mbanet.training.optim import Adam, TrainState
from mbanet.training.schedule import base_lr_at, lr_at

__all__ = [
    "Adam", "METRIC_COLUMNS", "SMOOTHING_VARIANTS", "TrainConfig", "TrainResult", "TrainState",
    "base_lr_at", "classification_accuracy", "lr_at", "smoothed_cross_entropy", "smoothed_targets",
    "total_loss", "train_loop",
]
