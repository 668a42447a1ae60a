"""End-to-end runs built from a :class:`ResolvedConfig`: train, evaluate, ablate, export splits."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, replace
from pathlib import Path

from mbanet.config import ResolvedConfig
from mbanet.data import (
    IdentityDataset,
    ImageSource,
    RetrievalSplit,
    export_split,
    load_split,
    make_split,
    make_synthetic_dataset,
    scan_dataset,
    scan_distractors,
)
from mbanet.errors import ConfigError
from mbanet.evaluation import EvalReport, evaluate, evaluate_repetitions
from mbanet.network import Network, NetworkConfig, assign_tensors, import_resnet50, read_tensors
from mbanet.training import TrainResult, train_loop

log = logging.getLogger(__name__)

# cumulative component order, row labels as conventionally printed
ABLATION_ROWS = (
    ("Global (ResNet50)", ("global",), False),
    ("+ Spatial attention", ("spatial", "global"), False),
    ("+ Channel attention", ("spatial", "global", "channel"), False),
    ("+ Relative position", ("spatial", "global", "channel"), True),
)


def load_dataset(cfg: ResolvedConfig, out_dir) -> IdentityDataset:
    run = cfg.run
    if run.dataset_root:
        return scan_dataset(run.dataset_root, layout=run.layout, subset=run.subset)
    if run.preset != "toy":
        raise ConfigError("dataset_root is required unless the toy preset is used")
    root = make_synthetic_dataset(Path(out_dir) / "toy_data", num_identities=run.toy_identities,
                                  images_per_identity=run.toy_images, size=run.toy_size, seed=cfg.train.seed)
    return scan_dataset(root)


def load_distractors(cfg: ResolvedConfig):
    return scan_distractors(cfg.run.distractor_root) if cfg.run.distractor_root else None


def split_for(cfg: ResolvedConfig, ds: IdentityDataset, repetition: int = 0) -> RetrievalSplit:
    return make_split(ds, cfg.train.seed, repetition, load_distractors(cfg), cfg.run.closed_set)


def build_network(cfg: ResolvedConfig, num_identities: int) -> Network:
    net = Network(cfg.network_config(num_identities))
    if cfg.run.pretrained:
        skipped = import_resnet50(net, cfg.run.pretrained)
        log.info("imported %s (skipped %d tensors)", cfg.run.pretrained, len(skipped))
    return net


def network_from_checkpoint(path) -> tuple[Network, dict]:
    tensors, meta = read_tensors(path)
    net = Network(NetworkConfig.from_dict(meta["network"]))
    assign_tensors(net, tensors, source=str(path))
    return net, meta


@dataclass
class TrainingRun:
    result: TrainResult
    split: RetrievalSplit
    dataset: IdentityDataset
    network: Network


def run_training(cfg: ResolvedConfig, out_dir) -> TrainingRun:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.write(out / "config.resolved.txt")
    ds = load_dataset(cfg, out)
    split = split_for(cfg, ds)
    export_split(split, out / "split.txt")
    net = build_network(cfg, split.num_train_identities)
    log.info("training on %d images of %d identities", len(split.train), split.num_train_identities)
    result = train_loop(net, split, cfg.train, cfg.augment, out_dir=out, source=ImageSource(max_cached=4096))
    return TrainingRun(result, split, ds, net)


def run_eval(cfg: ResolvedConfig, checkpoint, out_dir=None, foreign_split=None, net: Network | None = None,
             ds: IdentityDataset | None = None) -> EvalReport:
    """Score a checkpoint over ``repetitions`` splits, or once on a foreign split file.

    A foreign split (exported from another dataset) gives cross-domain
    numbers: the checkpoint is evaluated unchanged on that gallery and query.
    """
    if net is None:
        net, _ = network_from_checkpoint(checkpoint)
    if foreign_split:
        report = evaluate(net, load_split(foreign_split), cfg.augment, cfg.run.cmc_k)
    else:
        if ds is None:
            ds = load_dataset(cfg, out_dir or ".")
        report = evaluate_repetitions(net, ds, cfg.augment, cfg.run.repetitions, cfg.train.seed,
                                      load_distractors(cfg), cfg.run.closed_set, cfg.run.cmc_k)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        report.to_csv(out / "eval.csv")
        report.to_json(out / "eval.json")
    return report


@dataclass
class AblationRow:
    label: str
    report: EvalReport


def run_ablation(cfg: ResolvedConfig, out_dir) -> list[AblationRow]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.write(out / "config.resolved.txt")
    ds = load_dataset(cfg, out)
    # a generated toy tree is shared by all four rows
    cfg = replace(cfg, run=replace(cfg.run, dataset_root=str(ds.root)))
    rows = []
    for k, (label, branches, rpe) in enumerate(ABLATION_ROWS, start=1):
        row_cfg = replace(cfg, network=dict(cfg.network, branches=branches, use_rpe=rpe))
        run = run_training(row_cfg, out / f"row{k}")
        report = run_eval(row_cfg, None, out / f"row{k}", net=run.network, ds=ds)
        log.info("%s: rank-1 %.4f mAP %.4f", label, report.mean["rank1"], report.mean["mAP"])
        rows.append(AblationRow(label, report))
    write_ablation_table(rows, out / "ablation.csv")
    return rows


def write_ablation_table(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "label", "rank1", "mAP", "rank1_std", "mAP_std"])
        for k, row in enumerate(rows, start=1):
            m, s = row.report.mean, row.report.std
            w.writerow([k, row.label, repr(m["rank1"]), repr(m["mAP"]), repr(s["rank1"]), repr(s["mAP"])])


def run_export_split(cfg: ResolvedConfig, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds = load_dataset(cfg, out)
    paths = []
    for rep in range(cfg.run.repetitions):
        path = out / f"split_rep{rep:02d}.txt"
        export_split(split_for(cfg, ds, rep), path)
        paths.append(path)
    return paths
