"""Parameter checkpoint container.

Layout (all integers little-endian)::

    8 bytes   magic b"DVCKPT\\0\\0"
    uint32    format version (1)
    uint64    header length N
    N bytes   UTF-8 JSON header:
                {"format_version": 1,
                 "hyperparams": {...},
                 "tensors": [{"name": str, "shape": [int, ...], "offset": int}, ...],
                 "meta": {...}}
    payload   float64 little-endian buffers; "offset" counts bytes from the
              start of the payload, buffers are C-ordered and back to back

Optimizer moments are stored as ordinary tensors named ``adam.m.<param>``
and ``adam.v.<param>``. The layout is frozen for version 1; new fields go
into "meta".
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Optional

import numpy as np

from .config import HyperParams

MAGIC = b"DVCKPT\0\0"
VERSION = 1
_LE = np.dtype("<f8")


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, tensors: dict[str, np.ndarray], hp: HyperParams, meta: Optional[dict] = None) -> str:
    """Write ``tensors`` and return the SHA-256 of the file bytes."""
    index, offset, blobs = [], 0, []
    for name, arr in tensors.items():
        buf = np.ascontiguousarray(arr, dtype=_LE).tobytes()
        index.append({"name": name, "shape": list(np.shape(arr)), "offset": offset})
        blobs.append(buf)
        offset += len(buf)
    header = {"format_version": VERSION, "hyperparams": hp.to_dict(), "tensors": index, "meta": meta or {}}
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    data = b"".join([MAGIC, struct.pack("<IQ", VERSION, len(hb)), hb, *blobs])
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)
    return hashlib.sha256(data).hexdigest()


def load_checkpoint(path):
    """Return (tensors, hyperparams, meta)."""
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file")
    version, hlen = struct.unpack_from("<IQ", data, 8)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    header = json.loads(data[20:20 + hlen])
    base = 20 + hlen
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = base + entry["offset"]
        arr = np.frombuffer(data, dtype=_LE, count=count, offset=start).astype(np.float64)
        tensors[entry["name"]] = arr.reshape(shape)
    return tensors, HyperParams.from_dict(header["hyperparams"]), header.get("meta", {})


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
