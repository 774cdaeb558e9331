"""Flat little-endian float32 tensor files with a JSON index ``{name: {offset, shape}}``."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import CacheFormatError


def index_path(path) -> Path:
    return Path(path).with_suffix(".json")


def save_tensors(path, tensors: dict, meta: dict | None = None) -> None:
    index, offset = {}, 0
    path = Path(path)
    with open(path, "wb") as fh:
        for name, arr in tensors.items():
            data = np.ascontiguousarray(arr, dtype="<f4")
            index[name] = {"offset": offset, "shape": list(data.shape)}
            fh.write(data.tobytes())
            offset += data.nbytes
    with open(index_path(path), "w") as fh:
        json.dump({"meta": meta or {}, "tensors": index}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_tensors(path):
    """Returns ``(tensors, meta)``."""
    path = Path(path)
    with open(index_path(path)) as fh:
        index = json.load(fh)
    blob = path.read_bytes()
    tensors = {}
    for name, entry in index["tensors"].items():
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        end = entry["offset"] + 4 * count
        if end > len(blob):
            raise CacheFormatError(f"{path}: truncated tensor {name!r}")
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=entry["offset"])
        tensors[name] = arr.reshape(shape).astype(np.float32)
    return tensors, index.get("meta", {})
