"""Flat checkpoint container: JSON header + concatenated float64 buffers.

Layout: 8-byte magic, little-endian uint64 header length, UTF-8 JSON header
(ordered names, shapes, byte offsets), then the raw `<f8` payload.  Round
trips are bit exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

__all__ = ["save_arrays", "load_arrays", "CheckpointError"]

MAGIC = b"HYPCKPT1"


class CheckpointError(RuntimeError):
    pass


def save_arrays(path, arrays: dict[str, np.ndarray]):
    entries = []
    payload = bytearray()
    for name, arr in arrays.items():
        data = np.asarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(data.shape), "offset": len(payload)})
        payload += data.tobytes(order="C")
    header = json.dumps({"dtype": "<f8", "entries": entries}).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(header).to_bytes(8, "little"))
        fh.write(header)
        fh.write(bytes(payload))


def load_arrays(path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    hlen = int.from_bytes(raw[8:16], "little")
    header = json.loads(raw[16 : 16 + hlen].decode("utf-8"))
    body = raw[16 + hlen :]
    out = {}
    for entry in header["entries"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(body, dtype="<f8", count=count, offset=start).reshape(shape)
        out[entry["name"]] = arr.astype(np.float64).copy()
    return out
