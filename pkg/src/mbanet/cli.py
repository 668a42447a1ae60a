"""``mbanet`` command line: train, eval, ablate, selfcheck, export-split.

Exit status: 0 success, 1 usage or configuration error, 2 data or
checkpoint error, 3 numerical failure (divergence, failed self-check).
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import os
import sys
from pathlib import Path

from mbanet.config import resolve
from mbanet.errors import (
    CheckpointError,
    ConfigError,
    DataError,
    EmbeddingError,
    MBAError,
    NonFiniteError,
    ShapeError,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("mbanet")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mbanet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, out_default):
        p.add_argument("--config", type=Path, help="flat key = value config file")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
        p.add_argument("--out", type=Path, default=Path(out_default), help="output directory")
        p.add_argument("--dataset-root", help="dataset directory or manifest file")
        p.add_argument("--toy", action="store_true", help="toy preset on a generated synthetic dataset")
        p.add_argument("--seed", type=int, help="seed for splits, augmentation and batching")

    common(sub.add_parser("train", help="train a network and write checkpoints"), "runs/train")
    ev = sub.add_parser("eval", help="retrieval metrics for a checkpoint")
    common(ev, "runs/eval")
    ev.add_argument("--checkpoint", type=Path, required=True)
    ev.add_argument("--foreign-split", type=Path, help="split file from another dataset (cross-domain)")
    common(sub.add_parser("ablate", help="the four cumulative component configurations"), "runs/ablate")
    common(sub.add_parser("export-split", help="write the split files of every repetition"), "runs/splits")
    sc = sub.add_parser("selfcheck", help="numerical self-test")
    sc.add_argument("--seed", type=int, default=0)
    return parser


def thread_limit():
    """Context capping BLAS threads at ``MBA_NUM_THREADS`` when it is set."""
    raw = os.environ.get("MBA_NUM_THREADS")
    if not raw:
        return contextlib.nullcontext()
    try:
        n = int(raw)
        if n < 1:
            raise ValueError
    except ValueError:
        raise ConfigError(f"MBA_NUM_THREADS must be a positive integer, got {raw!r}") from None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def _resolve(args):
    from mbanet.config import parse_overrides

    return resolve(args.config, parse_overrides(args.overrides),
                   preset="toy" if args.toy else None, dataset_root=args.dataset_root, seed=args.seed)


def cmd_train(args) -> int:
    from mbanet.pipeline import run_training

    run = run_training(_resolve(args), args.out)
    res = run.result
    print(f"trained {len(res.history)} epochs in {res.seconds:.1f}s: final loss {res.final_loss:.6f}, "
          f"train accuracy {res.train_accuracy:.4f}")
    print(f"checkpoint: {args.out / 'final.ckpt'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from mbanet.pipeline import run_eval

    if not args.checkpoint.is_file():
        raise CheckpointError(f"checkpoint does not exist: {args.checkpoint}")
    report = run_eval(_resolve(args), args.checkpoint, args.out, foreign_split=args.foreign_split)
    m, s = report.mean, report.std
    print(f"{len(report.rank1)} repetition(s): rank-1 {m['rank1']:.4f} +- {s['rank1']:.4f}, "
          f"mAP {m['mAP']:.4f} +- {s['mAP']:.4f}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    from mbanet.pipeline import run_ablation

    rows = run_ablation(_resolve(args), args.out)
    width = max(len(r.label) for r in rows)
    print(f"{'':{width}}  rank-1    mAP")
    for row in rows:
        print(f"{row.label:{width}}  {row.report.mean['rank1']:.4f}  {row.report.mean['mAP']:.4f}")
    return EXIT_OK


def cmd_export_split(args) -> int:
    from mbanet.pipeline import run_export_split

    for path in run_export_split(_resolve(args), args.out):
        print(path)
    return EXIT_OK


def cmd_selfcheck(args) -> int:
    from mbanet.selfcheck import run_selfcheck

    results = run_selfcheck(args.seed)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed "
          f"across {len({r.category for r in results})} categories")
    return EXIT_NUMERIC if failed else EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate,
            "export-split": cmd_export_split, "selfcheck": cmd_selfcheck}


def exit_code(err: Exception) -> int:
    if isinstance(err, ConfigError):
        return EXIT_USAGE
    if isinstance(err, (NonFiniteError, EmbeddingError)):
        return EXIT_NUMERIC
    if isinstance(err, (DataError, CheckpointError, ShapeError)):
        return EXIT_DATA
    return EXIT_USAGE


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        with thread_limit():
            return COMMANDS[args.command](args)
    except MBAError as err:
        print(f"mbanet {args.command}: {type(err).__name__}: {err}", file=sys.stderr)
        return exit_code(err)


if __name__ == "__main__":
    sys.exit(main())
