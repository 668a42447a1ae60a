"""Dataset scanning for folder-per-identity trees and tab-separated manifests."""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

from PIL import Image, UnidentifiedImageError

from mbanet.errors import DataError

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".jpg", ".jpeg", ".png"}
LAYOUTS = ("folders", "manifest")


@dataclass(frozen=True)
class ImageRecord:
    path: Path
    identity: str
    label: int
    subset: str = ""
    size: tuple | None = None  # (width, height) from the file header


@dataclass
class IdentityDataset:
    root: Path
    records: list = field(default_factory=list)
    identities: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def by_identity(self) -> dict:
        groups = defaultdict(list)
        for rec in self.records:
            groups[rec.identity].append(rec)
        return dict(groups)


def _read_size(path: Path):
    try:
        with Image.open(path) as img:
            return img.size, None
    except (OSError, UnidentifiedImageError) as exc:
        return None, f"{path}: {exc}"


def scan_dataset(root, layout: str = "folders", subset: str = "", verify: bool = True) -> IdentityDataset:
    """Build an :class:`IdentityDataset` with records sorted by (identity, path).

    ``layout="folders"`` reads ``root/<identity>/<image>.{jpg,png}``.
    ``layout="manifest"`` reads ``root`` as a text file of ``path<TAB>identity``
    lines (an optional third column is the subset tag); relative paths resolve
    against the manifest's directory. Labels are contiguous in sorted identity
    order. With ``verify`` every image header is opened and failures are
    reported together.
    """
    root = Path(root)
    if layout not in LAYOUTS:
        raise DataError(f"unknown layout {layout!r}; expected one of {LAYOUTS}")
    if not root.exists():
        raise DataError(f"dataset root does not exist: {root}")

    pairs: list[tuple[Path, str, str]] = []
    if layout == "folders":
        if not root.is_dir():
            raise DataError(f"dataset root is not a directory: {root}")
        empty = []
        for folder in sorted(p for p in root.iterdir() if p.is_dir()):
            images = sorted(p for p in folder.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
            if not images:
                empty.append(str(folder))
            pairs += [(img, folder.name, subset) for img in images]
        if empty:
            raise DataError("identity folders without images: " + ", ".join(empty))
    else:
        base = root.parent
        missing = []
        for lineno, line in enumerate(root.read_text().splitlines(), start=1):
            if not line.strip() or line.startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) < 2:
                raise DataError(f"{root}:{lineno}: expected 'path<TAB>identity', got {line!r}")
            path = Path(cols[0])
            path = path if path.is_absolute() else base / path
            if not path.exists():
                missing.append(str(path))
            pairs.append((path, cols[1], cols[2] if len(cols) > 2 else subset))
        if missing:
            raise DataError("manifest lists missing files: " + ", ".join(missing))

    if not pairs:
        raise DataError(f"no images found under {root}")
    pairs.sort(key=lambda t: (t[1], str(t[0])))
    identities = sorted({ident for _, ident, _ in pairs})
    labels = {ident: i for i, ident in enumerate(identities)}

    records, bad = [], []
    for path, ident, tag in pairs:
        size = None
        if verify:
            size, err = _read_size(path)
            if err:
                bad.append(err)
                continue
        records.append(ImageRecord(path, ident, labels[ident], tag, size))
    if bad:
        raise DataError("unreadable images:\n  " + "\n  ".join(bad))
    return IdentityDataset(root, records, identities)


def scan_distractors(root) -> list[ImageRecord]:
    """Every image below ``root`` (any depth) as a gallery-only record."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"distractor root does not exist: {root}")
    paths = sorted(p for p in root.rglob("*") if p.suffix.lower() in IMAGE_SUFFIXES)
    if not paths:
        raise DataError(f"no distractor images under {root}")
    records, bad = [], []
    for path in paths:
        size, err = _read_size(path)
        if err:
            bad.append(err)
        records.append(ImageRecord(path, "__distractor__", -1, "distractor", size))
    if bad:
        raise DataError("unreadable images:\n  " + "\n  ".join(bad))
    return records
