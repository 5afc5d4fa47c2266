"""Parameter snapshots: a single self-describing binary container.

Layout: 4-byte magic, uint32 little-endian header length, a JSON header
carrying the format version and the ordered (name, shape) table, then the
raw little-endian float64 value blobs in header order.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

MAGIC = b"CSCK"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Raised for unreadable or incompatible checkpoint files."""


def save_params(params: dict, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(params)
    header = {
        "format_version": FORMAT_VERSION,
        "params": [
            {"name": n, "shape": list(np.asarray(params[n]).shape)} for n in names
        ],
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(np.array(len(blob), dtype="<u4").tobytes())
        f.write(blob)
        for n in names:
            arr = np.ascontiguousarray(np.asarray(params[n], dtype=np.float64))
            f.write(arr.astype("<f8", copy=False).tobytes())


def load_params(path) -> dict:
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file (bad magic {magic!r})")
        (hlen,) = np.frombuffer(f.read(4), dtype="<u4")
        header = json.loads(f.read(int(hlen)).decode("utf-8"))
        if header.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(
                f"{path}: unsupported format version {header.get('format_version')}"
            )
        out = {}
        for entry in header["params"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = f.read(count * 8)
            if len(raw) != count * 8:
                raise CheckpointError(f"{path}: truncated data for {entry['name']}")
            out[entry["name"]] = np.frombuffer(raw, dtype="<f8").astype(
                np.float64
            ).reshape(shape)
        return out
