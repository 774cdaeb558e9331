"""Counter-based random streams keyed by explicit integer tuples.

Every random draw in the package goes through :func:`generator`, which maps a
key tuple such as ``(seed, step, example, op)`` to a fresh Philox generator.
There is no global RNG state, so results do not depend on the order in which
examples or sweep configurations are processed.
"""

from __future__ import annotations

import zlib
from typing import Tuple, Union

import numpy as np

Key = Tuple[int, ...]
KeyPart = Union[int, str, np.integer]


def tag(name: str) -> int:
    """Stable integer id for a named stream (crc32 of the name)."""
    return zlib.crc32(name.encode("utf-8"))


def _part(p: KeyPart) -> int:
    if isinstance(p, str):
        return tag(p)
    p = int(p)
    if p < 0:
        raise ValueError(f"key parts must be non-negative, got {p}")
    return p


def make_key(*parts: KeyPart) -> Key:
    return tuple(_part(p) for p in parts)


def fold_in(key: Key, *parts: KeyPart) -> Key:
    """Derive a child key; ``fold_in(k, a, b) == fold_in(fold_in(k, a), b)``."""
    return tuple(key) + make_key(*parts)


def generator(key: Key) -> np.random.Generator:
    """Philox generator whose stream is a pure function of ``key``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(list(key))))
