from __future__ import annotations

import logging
from dataclasses import dataclass

from mbanet.errors import ConfigError
from mbanet.training.loss import SMOOTHING_VARIANTS

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 70
    batch_size: int = 20
    base_lr: float = 8e-4
    warmup_start_lr: float = 8e-6
    warmup_epochs: int = 10
    warmup_per_iteration: bool = False
    decay_epochs: tuple = (40, 60)
    decay_lrs: tuple = (4e-4, 2e-4)
    weight_decay: float = 5e-4
    label_smoothing: float = 0.1
    smoothing_variant: str = "uniform"
    backbone_lr_ratio: float = 0.1
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    checkpoint_every: int = 10
    seed: int = 0

    def __post_init__(self):
        self.decay_epochs = tuple(int(e) for e in self.decay_epochs)
        self.decay_lrs = tuple(float(v) for v in self.decay_lrs)
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if len(self.decay_epochs) != len(self.decay_lrs):
            raise ConfigError("decay_epochs and decay_lrs must have equal length")
        if list(self.decay_epochs) != sorted(set(self.decay_epochs)):
            raise ConfigError(f"decay epochs must be strictly ascending, got {self.decay_epochs}")
        if self.decay_epochs and self.decay_epochs[0] < self.warmup_epochs:
            raise ConfigError("first decay epoch falls inside warmup")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigError(f"label_smoothing must lie in [0, 1), got {self.label_smoothing}")
        if self.smoothing_variant not in SMOOTHING_VARIANTS:
            raise ConfigError(f"smoothing_variant must be one of {SMOOTHING_VARIANTS}")
        if self.warmup_epochs < 0:
            raise ConfigError("warmup_epochs must be >= 0")
        if self.warmup_epochs >= self.epochs > 0:
            log.warning("warmup (%d epochs) does not finish within %d epochs", self.warmup_epochs, self.epochs)

    @classmethod
    def toy(cls, **overrides) -> "TrainConfig":
        """Compressed schedule for the synthetic desk-scale runs."""
        base = dict(epochs=30, batch_size=20, base_lr=3e-3, warmup_start_lr=3e-5, warmup_epochs=3,
                    decay_epochs=(18, 25), decay_lrs=(1.5e-3, 7.5e-4), checkpoint_every=10)
        base.update(overrides)
        return cls(**base)
