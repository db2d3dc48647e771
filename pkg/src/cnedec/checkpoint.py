"""Versioned binary container for named float32 arrays plus a JSON header.

Layout::

    b"CNEDCKPT"                 8-byte magic
    uint32 little-endian        format version
    uint64 little-endian        header length in bytes
    header                      UTF-8 JSON: {"meta": {...}, "arrays": [{"name", "shape"}, ...]}
    payload                     row-major little-endian float32 values of each array, in order
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import CheckpointError

MAGIC = b"CNEDCKPT"
FORMAT_VERSION = 1
_F32 = np.dtype("<f4")


def write_checkpoint(path: str | Path, meta: dict, arrays: Iterable[tuple[str, np.ndarray]]) -> None:
    arrays = [(name, np.ascontiguousarray(a, dtype=_F32)) for name, a in arrays]
    names = [n for n, _ in arrays]
    if len(set(names)) != len(names):
        raise CheckpointError("duplicate array names in checkpoint")
    header = json.dumps(
        {"meta": meta, "arrays": [{"name": n, "shape": list(a.shape)} for n, a in arrays]},
        sort_keys=True,
    ).encode()
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(header)))
        fh.write(header)
        for _, a in arrays:
            fh.write(a.tobytes())
    tmp.replace(path)


def read_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    """Return ``(meta, {name: float32 array})``."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file")
    version, hlen = struct.unpack("<IQ", raw[8:20])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    try:
        header = json.loads(raw[20:20 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise CheckpointError(f"{path}: corrupt header") from None
    offset = 20 + hlen
    out = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape, dtype=np.int64))
        end = offset + 4 * n
        if end > len(raw):
            raise CheckpointError(f"{path}: truncated payload at {entry['name']!r}")
        out[entry["name"]] = np.frombuffer(raw, dtype=_F32, count=n, offset=offset).reshape(shape).copy()
        offset = end
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    return header["meta"], out
