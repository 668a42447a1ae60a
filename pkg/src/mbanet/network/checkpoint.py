"""Binary checkpoint files of named tensors.

Layout (all integers little-endian)::

    magic      8 bytes  b"MBANETCK"
    version    u32
    meta_len   u32, then meta_len bytes of UTF-8 JSON (network config etc.)
    count      u32
    count x entry:
        name_len u16, name (UTF-8)
        dtype    u8   (0 float32, 1 float64, 2 int64)
        ndim     u8, then ndim x u64 extents
        offset   u64  (relative to the start of the payload area)
        nbytes   u64
    payload    raw little-endian tensor bytes, in directory order
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from mbanet.errors import CheckpointError
from mbanet.tensor_core.module import BatchNorm, Module

MAGIC = b"MBANETCK"
VERSION = 1
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
DTYPE_CODES = {np.dtype(v).newbyteorder("="): k for k, v in DTYPES.items()}


def write_tensors(path, tensors: dict, meta: dict | None = None) -> None:
    """Write ``name -> array`` to ``path`` atomically (temp file then rename)."""
    path = Path(path)
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode()
    directory = bytearray()
    payloads = []
    offset = 0
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        code = DTYPE_CODES.get(arr.dtype.newbyteorder("="))
        if code is None:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for tensor {name!r}")
        raw = np.ascontiguousarray(arr, dtype=DTYPES[code]).tobytes()
        encoded = name.encode("utf-8")
        directory += struct.pack("<H", len(encoded)) + encoded
        directory += struct.pack("<BB", code, arr.ndim)
        directory += struct.pack(f"<{arr.ndim}Q", *arr.shape)
        directory += struct.pack("<QQ", offset, len(raw))
        payloads.append(raw)
        offset += len(raw)
    header = MAGIC + struct.pack("<II", VERSION, len(meta_bytes)) + meta_bytes
    header += struct.pack("<I", len(tensors)) + bytes(directory)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(header)
        for raw in payloads:
            fh.write(raw)
    os.replace(tmp, path)


def read_tensors(path) -> tuple[dict, dict]:
    """Return ``(tensors, meta)``; the whole file is validated before anything is returned."""
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(blob):
            raise CheckpointError(f"corrupt header in {path}: truncated at byte {pos}")
        chunk = blob[pos:pos + n]
        pos += n
        return chunk

    if take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"corrupt header in {path}: bad magic bytes")
    version, meta_len = struct.unpack("<II", take(8))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} in {path}")
    try:
        meta = json.loads(take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt header in {path}: bad metadata") from exc
    (count,) = struct.unpack("<I", take(4))
    entries = []
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        try:
            name = take(name_len).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointError(f"corrupt header in {path}: bad tensor name") from exc
        code, ndim = struct.unpack("<BB", take(2))
        if code not in DTYPES:
            raise CheckpointError(f"corrupt header in {path}: unknown dtype code {code} for {name!r}")
        shape = struct.unpack(f"<{ndim}Q", take(8 * ndim))
        offset, nbytes = struct.unpack("<QQ", take(16))
        if nbytes != int(np.prod(shape, dtype=np.int64)) * DTYPES[code].itemsize:
            raise CheckpointError(f"corrupt header in {path}: size of {name!r} disagrees with its shape")
        entries.append((name, DTYPES[code], shape, offset, nbytes))
    base = pos
    tensors = {}
    for name, dtype, shape, offset, nbytes in entries:
        start = base + offset
        if start + nbytes > len(blob):
            raise CheckpointError(f"corrupt header in {path}: payload of {name!r} runs past end of file")
        arr = np.frombuffer(blob, dtype=dtype, count=nbytes // dtype.itemsize, offset=start)
        tensors[name] = arr.reshape(shape).astype(dtype.newbyteorder("="))
    return tensors, meta


def save_checkpoint(net: Module, path, meta: dict | None = None) -> None:
    if meta is None and hasattr(net, "config"):
        meta = {"network": net.config.to_dict()}
    write_tensors(path, net.state_dict(), meta)


def load_checkpoint(net: Module, path) -> dict:
    """Load every named tensor into ``net``; returns the stored metadata.

    Unknown names, missing names and shape mismatches are all reported before
    any parameter is touched.
    """
    tensors, meta = read_tensors(path)
    assign_tensors(net, tensors, source=str(path))
    return meta


def assign_tensors(net: Module, tensors: dict, source: str = "checkpoint") -> None:
    current = net.state_dict()
    unknown = sorted(set(tensors) - set(current))
    missing = sorted(set(current) - set(tensors))
    problems = []
    if unknown:
        problems.append(f"unknown tensors: {', '.join(unknown)}")
    if missing:
        problems.append(f"missing tensors: {', '.join(missing)}")
    for name in sorted(set(tensors) & set(current)):
        if tuple(tensors[name].shape) != tuple(current[name].shape):
            problems.append(f"shape mismatch for {name}: file {tensors[name].shape} vs network {current[name].shape}")
    if problems:
        raise CheckpointError(f"{source}: " + "; ".join(problems))
    net.load_state_dict(tensors)


def import_resnet50(net, path) -> list[str]:
    """Load externally exported ResNet50 tensors (``conv1.weight``, ``layer4.2.bn3.bias``, ...).

    ``layer4.*`` is copied into every branch's stage-4 copy, BN ``weight``/``bias``
    map to ``scale``/``shift``, and ``fc.*`` / ``num_batches_tracked`` are skipped.
    Returns the names that were skipped. Names the network does not have are an error.
    """
    tensors, _ = read_tensors(path)
    modules = dict(net.named_modules())
    current = net.state_dict()
    mapped: dict = {}
    skipped = []
    for name, arr in tensors.items():
        if name.startswith("fc.") or name.endswith("num_batches_tracked"):
            skipped.append(name)
            continue
        if name.startswith("layer4."):
            targets = [f"stage4_{b}.{name[len('layer4.'):]}" for b in net.branch_names]
        else:
            targets = [f"backbone.{name}"]
        for target in targets:
            prefix, _, leaf = target.rpartition(".")
            if isinstance(modules.get(prefix), BatchNorm):
                leaf = {"weight": "scale", "bias": "shift"}.get(leaf, leaf)
            key = f"{prefix}.{leaf}"
            if key not in current:
                # a shared stage-4 copy is registered under the first branch name only
                if net.config.share_stage4 and key.startswith("stage4_"):
                    continue
                raise CheckpointError(f"{path}: no destination for tensor {name!r} (tried {key})")
            if tuple(arr.shape) != tuple(current[key].shape):
                raise CheckpointError(f"{path}: shape mismatch for {name}: {arr.shape} vs {current[key].shape}")
            mapped[key] = arr
    net.load_state_dict(mapped)
    return skipped
