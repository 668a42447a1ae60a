"""Warmup + step learning-rate schedule with a reduced rate for backbone layers."""

from __future__ import annotations

from mbanet.training.config import TrainConfig


def base_lr_at(epoch: float, cfg: TrainConfig) -> float:
    """Learning rate of the newly added layers at (possibly fractional) ``epoch``.

    Warmup interpolates linearly from ``warmup_start_lr`` at epoch 0 to
    ``base_lr`` at epoch ``warmup_epochs - 1`` (both endpoints inclusive).
    Each decay takes effect from the start of its epoch.
    """
    span = cfg.warmup_epochs - 1
    if epoch < span:
        frac = epoch / span
        return cfg.warmup_start_lr + (cfg.base_lr - cfg.warmup_start_lr) * frac
    lr = cfg.base_lr
    for start, value in zip(cfg.decay_epochs, cfg.decay_lrs):
        if epoch >= start:
            lr = value
    return lr


def lr_at(epoch: int, cfg: TrainConfig, progress: float = 0.0) -> dict:
    """``{"new": lr, "backbone": lr * backbone_lr_ratio}`` for an epoch in ``[0, epochs)``.

    ``progress`` in ``[0, 1)`` is the fraction of the epoch completed; it only
    matters during warmup and only when ``warmup_per_iteration`` is set.
    """
    if not 0 <= epoch < max(cfg.epochs, 1):
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs})")
    t = epoch + progress if cfg.warmup_per_iteration and epoch < cfg.warmup_epochs else epoch
    lr = base_lr_at(t, cfg)
    return {"new": lr, "backbone": lr * cfg.backbone_lr_ratio}
