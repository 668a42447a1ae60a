"""Identity-halving train/test partition with per-repetition gallery and query draws.

Identities are sorted by name; the first ``ceil(n / 2)`` train the network
and the rest are held out. For each repetition a generator seeded with
``(seed, repetition)`` picks one validation image per training identity and
one gallery image per test identity; every remaining test image becomes a
query. Optional distractor images join the gallery only and carry label -1,
which no query can match.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from mbanet.data.dataset import IdentityDataset, ImageRecord
from mbanet.errors import DataError

log = logging.getLogger(__name__)

DISTRACTOR_LABEL = -1
ROLES = ("train", "validation", "gallery", "query")


@dataclass
class RetrievalSplit:
    train: list = field(default_factory=list)
    validation: list = field(default_factory=list)
    gallery: list = field(default_factory=list)
    query: list = field(default_factory=list)
    train_identities: list = field(default_factory=list)
    test_identities: list = field(default_factory=list)
    seed: int = 0
    repetition: int = 0
    distractors: set = field(default_factory=set)

    @property
    def num_train_identities(self) -> int:
        return len(self.train_identities)

    def train_labels(self, records) -> np.ndarray:
        """Contiguous classifier labels (sorted training identity order)."""
        index = {ident: i for i, ident in enumerate(self.train_identities)}
        return np.array([index[r.identity] for r in records], dtype=np.int64)

    def retrieval_labels(self, records) -> np.ndarray:
        """Integer identity labels for ranking; distractors map to -1."""
        index = {ident: i for i, ident in enumerate(sorted(set(self.train_identities) | set(self.test_identities)))}
        return np.array(
            [DISTRACTOR_LABEL if r.path in self.distractors else index[r.identity] for r in records],
            dtype=np.int64,
        )


def make_split(
    ds: IdentityDataset,
    seed: int = 0,
    repetition: int = 0,
    distractors=None,
    closed_set: bool = False,
) -> RetrievalSplit:
    """Partition ``ds`` for one repetition.

    ``closed_set=True`` uses every identity for training and for the
    gallery/query draw, which gives a self-retrieval sanity split.
    ``distractors`` is an iterable of :class:`ImageRecord` appended to the gallery.
    """
    groups = ds.by_identity()
    identities = sorted(groups)
    if len(identities) < 2:
        raise DataError(f"need at least 2 identities to split, found {len(identities)}")
    n_train = (len(identities) + 1) // 2
    if closed_set:
        train_ids, test_ids = identities, identities
    else:
        train_ids, test_ids = identities[:n_train], identities[n_train:]

    rng = np.random.default_rng([seed, repetition])
    split = RetrievalSplit(train_identities=list(train_ids), test_identities=list(test_ids),
                           seed=seed, repetition=repetition)
    for ident in train_ids:
        images = groups[ident]
        val = int(rng.integers(len(images))) if len(images) > 1 else None
        for k, rec in enumerate(images):
            (split.validation if k == val else split.train).append(rec)
    for ident in test_ids:
        images = groups[ident]
        pick = int(rng.integers(len(images)))
        if len(images) == 1:
            log.warning("test identity %s has a single image: gallery only, no queries", ident)
        for k, rec in enumerate(images):
            (split.gallery if k == pick else split.query).append(rec)
    if distractors is not None:
        for rec in distractors:
            split.gallery.append(rec)
            split.distractors.add(rec.path)
    return split


def export_split(split: RetrievalSplit, path) -> None:
    """Write one ``role<TAB>identity<TAB>path`` line per image, for audit or reuse."""
    lines = [
        "# mbanet split v1",
        f"# seed={split.seed} repetition={split.repetition}",
        f"# train_identities={len(split.train_identities)} test_identities={len(split.test_identities)}",
    ]
    for role in ROLES:
        for rec in getattr(split, role):
            tag = "distractor" if role == "gallery" and rec.path in split.distractors else role
            lines.append(f"{tag}\t{rec.identity}\t{Path(rec.path).resolve()}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_split(path) -> RetrievalSplit:
    """Read a file written by :func:`export_split`."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"split file does not exist: {path}")
    split = RetrievalSplit()
    train_ids, test_ids = set(), set()
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if line.startswith("# seed="):
            meta = dict(kv.split("=") for kv in line[2:].split())
            split.seed, split.repetition = int(meta["seed"]), int(meta["repetition"])
            continue
        if not line.strip() or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != 3 or cols[0] not in ROLES + ("distractor",):
            raise DataError(f"{path}:{lineno}: malformed split line {line!r}")
        role, ident, img = cols
        rec = ImageRecord(Path(img), ident, -1)
        if role == "distractor":
            split.gallery.append(rec)
            split.distractors.add(rec.path)
            continue
        getattr(split, role).append(rec)
        (train_ids if role in ("train", "validation") else test_ids).add(ident)
    split.train_identities = sorted(train_ids)
    split.test_identities = sorted(test_ids)
    return split
