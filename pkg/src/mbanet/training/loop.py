"""The epoch loop: batches, schedule, logging, checkpoints and divergence checks."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from mbanet.data.augment import AugmentationConfig, ImageSource, augment_train, image_rng, prepare_eval
from mbanet.data.split import RetrievalSplit
from mbanet.errors import NonFiniteError, ShapeError, TrainingDivergedError
from mbanet.network.checkpoint import save_checkpoint
from mbanet.network.model import Network, evaluating
from mbanet.tensor_core import Tensor, no_grad
from mbanet.training.config import TrainConfig
from mbanet.training.loss import total_loss
from mbanet.training.optim import Adam
from mbanet.training.schedule import lr_at

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("epoch", "train_loss", "val_acc", "lr_new", "lr_backbone",
                  "gamma_s3", "gamma_s4", "gamma_c3", "gamma_c4")


@dataclass
class TrainResult:
    history: list = field(default_factory=list)
    final_loss: float = math.nan
    train_accuracy: float = math.nan
    checkpoints: list = field(default_factory=list)
    best_checkpoint: str | None = None
    seconds: float = 0.0


def load_batch(records, transform, source: ImageSource) -> Tensor:
    return Tensor(np.stack([transform(i, source.load(r.path)) for i, r in records]))


def classification_accuracy(net: Network, records, labels, aug: AugmentationConfig,
                            source: ImageSource | None = None, batch_size: int = 50) -> float:
    """Top-1 identity accuracy of the summed branch logits, eval mode, no augmentation."""
    if not records:
        return math.nan
    source = source or ImageSource()
    labels = np.asarray(labels)
    correct = 0
    with evaluating(net), no_grad():
        for start in range(0, len(records), batch_size):
            chunk = list(enumerate(records[start:start + batch_size]))
            x = load_batch(chunk, lambda _, img: prepare_eval(img, aug), source)
            logits = sum(out.data for out in net.forward_train(x).logits.values())
            correct += int((logits.argmax(axis=1) == labels[start:start + batch_size]).sum())
    return correct / len(records)


def _format(value) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    return repr(float(value)) if isinstance(value, float) else str(value)


def train_loop(net: Network, split: RetrievalSplit, cfg: TrainConfig,
               aug: AugmentationConfig | None = None, out_dir=None,
               source: ImageSource | None = None) -> TrainResult:
    """Train ``net`` on ``split.train`` and log one metrics row per epoch.

    With ``out_dir`` set, ``metrics.csv`` and the checkpoints (every
    ``checkpoint_every`` epochs, ``final.ckpt`` and ``best.ckpt``) are written
    there. Given the same seeds two runs produce bit-identical losses.
    """
    aug = aug or AugmentationConfig()
    source = source or ImageSource(max_cached=4096)
    records = list(split.train)
    if not records:
        raise ShapeError("the split has no training images")
    labels = split.train_labels(records)
    if split.num_train_identities != net.config.num_identities:
        raise ShapeError(f"split has {split.num_train_identities} training identities but the network "
                         f"classifies {net.config.num_identities}")
    val_labels = split.train_labels(split.validation)

    out = Path(out_dir) if out_dir is not None else None
    writer = handle = None
    if out is not None:
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)
        handle = open(out / "metrics.csv", "w", newline="")
        writer = csv.writer(handle)
        writer.writerow(METRIC_COLUMNS)

    opt = Adam(net.param_groups(), lr=0.0, betas=(cfg.adam_beta1, cfg.adam_beta2), eps=cfg.adam_eps,
               weight_decay=cfg.weight_decay)
    net.rng = np.random.default_rng([cfg.seed, 0xD0])
    result = TrainResult()
    started = time.perf_counter()
    meta = {"network": net.config.to_dict(), "train": asdict(cfg)}
    net.train()
    try:
        for epoch in range(cfg.epochs):
            opt.state.epoch = epoch
            order = np.random.default_rng([cfg.seed, epoch]).permutation(len(records))
            batches = [order[i:i + cfg.batch_size] for i in range(0, len(order), cfg.batch_size)]
            if len(batches) > 1 and len(batches[-1]) < 2:
                batches.pop()  # a single image gives degenerate batch statistics
            loss_sum, seen = 0.0, 0
            for b, idx in enumerate(batches):
                lrs = lr_at(epoch, cfg, progress=b / len(batches))
                opt.set_lr(lrs)
                x = load_batch([(int(i), records[i]) for i in idx],
                               lambda i, img: augment_train(img, aug, image_rng(cfg.seed, epoch, i)), source)
                try:
                    output = net.forward_train(x, labels[idx])
                    loss = total_loss(output.logits, labels[idx], cfg.label_smoothing, cfg.smoothing_variant)
                    value = float(loss.data)
                    if not math.isfinite(value):
                        raise NonFiniteError(f"loss is {value}")
                    opt.zero_grad()
                    loss.backward()
                except NonFiniteError as err:
                    raise TrainingDivergedError(
                        f"training diverged at epoch {epoch}, batch {b}: {err}; "
                        f"gammas={net.gammas()} lr={lrs}",
                        epoch=epoch, batch=b, gammas=net.gammas(), lr=lrs,
                    ) from err
                opt.step()
                loss_sum += value * len(idx)
                seen += len(idx)

            epoch_loss = loss_sum / seen
            try:
                val_acc = classification_accuracy(net, split.validation, val_labels, aug, source)
            except NonFiniteError as err:
                raise TrainingDivergedError(
                    f"training diverged at epoch {epoch}, validation pass: {err}; gammas={net.gammas()} lr={lrs}",
                    epoch=epoch, batch=None, gammas=net.gammas(), lr=lrs,
                ) from err
            gammas = net.gammas()
            row = {"epoch": epoch, "train_loss": epoch_loss, "val_acc": val_acc,
                   "lr_new": lrs["new"], "lr_backbone": lrs["backbone"]}
            row.update({f"gamma_{k}": gammas.get(k) for k in ("s3", "s4", "c3", "c4")})
            result.history.append(row)
            log.info("epoch %d loss %.5f val_acc %s", epoch, epoch_loss, _format(val_acc) or "n/a")
            if writer is not None:
                writer.writerow([_format(row[c]) for c in METRIC_COLUMNS])
                handle.flush()
                epoch_meta = dict(meta, epoch=epoch, val_acc=None if math.isnan(val_acc) else val_acc)
                if cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
                    path = out / "checkpoints" / f"epoch_{epoch + 1:03d}.ckpt"
                    save_checkpoint(net, path, epoch_meta)
                    result.checkpoints.append(str(path))
                if not math.isnan(val_acc) and val_acc > opt.state.best_val_acc:
                    opt.state.best_val_acc = val_acc
                    opt.state.best_checkpoint = str(out / "best.ckpt")
                    save_checkpoint(net, out / "best.ckpt", epoch_meta)
    finally:
        if handle is not None:
            handle.close()

    if result.history:
        result.final_loss = result.history[-1]["train_loss"]
    result.train_accuracy = classification_accuracy(net, records, labels, aug, source)
    if out is not None:
        save_checkpoint(net, out / "final.ckpt", dict(meta, epoch=cfg.epochs - 1,
                                                      train_accuracy=result.train_accuracy))
        result.checkpoints.append(str(out / "final.ckpt"))
        result.best_checkpoint = opt.state.best_checkpoint
    result.seconds = time.perf_counter() - started
    return result
