"""On-disk frozen-feature caches, NPY import/export, synthetic data and k-shot sampling.

Binary layout (little-endian)::

    magic "FFAC" | version u32 | layout u8 | pad 3 | N u32 | C u32 | S u32 | E u64
    labels  E x u32
    data    E*N*C x f32, row-major [example][token][channel]

A JSON sidecar ``<name>.json`` next to the cache repeats the header fields and
adds ``split_name`` and ``source``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import CacheFormatError, ValidationError
from .rng import generator, make_key

MAGIC = b"FFAC"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sIB3xIIIQ")
LAYOUTS = ("token_grid", "pooled")


@dataclass(frozen=True)
class CacheManifest:
    version: int
    layout: str
    N: int
    C: int
    num_examples: int
    num_classes: int
    split_name: str = "train"
    source: str = ""

    def validate(self) -> None:
        if self.layout not in LAYOUTS:
            raise ValidationError(f"unknown layout {self.layout!r}")
        if self.layout == "pooled" and self.N != 1:
            raise ValidationError("pooled layout requires N=1")
        if self.N < 1 or self.C < 1:
            raise ValidationError("N and C must be positive")
        if self.num_examples < 1:
            raise ValidationError("a cache needs at least one example")
        if self.num_classes < 2:
            raise ValidationError("a cache needs at least two classes")


@dataclass(frozen=True)
class FeatureCache:
    """An in-memory cache: ``features`` has shape (E, N, C), ``labels`` shape (E,)."""

    manifest: CacheManifest
    labels: np.ndarray
    features: np.ndarray

    @property
    def num_classes(self) -> int:
        return self.manifest.num_classes

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, indices, split_name: str | None = None) -> "FeatureCache":
        indices = np.asarray(indices, dtype=np.int64)
        m = replace(
            self.manifest,
            num_examples=len(indices),
            split_name=split_name or self.manifest.split_name,
        )
        return FeatureCache(m, self.labels[indices], self.features[indices])

    def pooled(self) -> np.ndarray:
        """(E, C) view: the single pooled token, or the token mean for grids."""
        if self.manifest.layout == "pooled":
            return self.features[:, 0, :]
        return self.features.mean(axis=1)


@dataclass(frozen=True)
class FewShotSample:
    shot_count: int
    seed: int
    indices: np.ndarray


def _check_payload(manifest: CacheManifest, labels: np.ndarray, features: np.ndarray) -> None:
    manifest.validate()
    E, N, C = manifest.num_examples, manifest.N, manifest.C
    if labels.shape != (E,):
        raise ValidationError(f"expected {E} labels, got shape {labels.shape}")
    if features.shape != (E, N, C):
        raise ValidationError(
            f"shape mismatch: features {features.shape} vs manifest ({E}, {N}, {C})"
        )
    if labels.size and (labels.min() < 0 or labels.max() >= manifest.num_classes):
        raise ValidationError("label out of range")
    if not np.all(np.isfinite(features)):
        raise ValidationError("features must be finite")


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def write_cache(manifest: CacheManifest, labels, features, path) -> None:
    """Write a cache file plus its JSON sidecar. ``features`` is an (E, N, C)
    array or a list of (N, C) tensors."""
    labels = np.asarray(labels)
    if isinstance(features, np.ndarray):
        feats = features
    else:
        shapes = {np.shape(f) for f in features}
        if len(shapes) > 1:
            raise ValidationError(f"shape mismatch between tensors: {sorted(shapes)}")
        feats = np.stack([np.asarray(f) for f in features]) if len(features) else np.empty((0,))
    if feats.ndim == 2 and manifest.layout == "pooled":
        feats = feats[:, None, :]
    _check_payload(manifest, labels, feats)

    header = HEADER.pack(
        MAGIC,
        manifest.version,
        LAYOUTS.index(manifest.layout),
        manifest.N,
        manifest.C,
        manifest.num_classes,
        manifest.num_examples,
    )
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(labels.astype("<u4").tobytes())
        fh.write(np.ascontiguousarray(feats, dtype="<f4").tobytes())
    with open(sidecar_path(path), "w") as fh:
        json.dump(asdict(manifest), fh, indent=2, sort_keys=True)
        fh.write("\n")


def save_cache(cache: FeatureCache, path) -> None:
    write_cache(cache.manifest, cache.labels, cache.features, path)


def read_cache(path) -> FeatureCache:
    path = Path(path)
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise CacheFormatError(f"{path}: not a feature cache")
    if len(blob) < HEADER.size:
        raise CacheFormatError(f"{path}: truncated header")
    _, version, layout_id, N, C, S, E = HEADER.unpack_from(blob)
    if layout_id >= len(LAYOUTS):
        raise CacheFormatError(f"{path}: unknown layout id {layout_id}")
    expected = HEADER.size + 4 * E + 4 * E * N * C
    if len(blob) < expected:
        raise CacheFormatError(
            f"{path}: truncated payload ({len(blob)} of {expected} bytes)"
        )
    if len(blob) > expected:
        raise CacheFormatError(
            f"{path}: byte count mismatch ({len(blob)} bytes, header implies {expected})"
        )

    split_name, source = "train", ""
    side = sidecar_path(path)
    if side.exists():
        with open(side) as fh:
            meta = json.load(fh)
        split_name = meta.get("split_name", split_name)
        source = meta.get("source", source)
    manifest = CacheManifest(version, LAYOUTS[layout_id], N, C, E, S, split_name, source)

    labels = np.frombuffer(blob, dtype="<u4", count=E, offset=HEADER.size).astype(np.int64)
    data = np.frombuffer(blob, dtype="<f4", count=E * N * C, offset=HEADER.size + 4 * E)
    features = data.reshape(E, N, C).astype(np.float32)
    try:
        _check_payload(manifest, labels, features)
    except ValidationError as exc:
        raise CacheFormatError(f"{path}: {exc}") from exc
    return FeatureCache(manifest, labels, features)


def _load_npy(path, allowed_dtypes: Sequence[str]) -> np.ndarray:
    with open(path, "rb") as fh:
        version = np.lib.format.read_magic(fh)
        if version not in ((1, 0), (2, 0)):
            raise ValidationError(f"{path}: unsupported npy format version {version}")
        if version == (1, 0):
            shape, fortran_order, dtype = np.lib.format.read_array_header_1_0(fh)
        else:
            shape, fortran_order, dtype = np.lib.format.read_array_header_2_0(fh)
    if fortran_order:
        raise ValidationError(f"{path}: only C-order arrays are supported")
    if dtype.str not in allowed_dtypes:
        raise ValidationError(f"{path}: unsupported dtype {dtype.str}")
    return np.load(path, allow_pickle=False)


def import_npy(
    features_path, labels_path, layout: str = "token_grid", split_name: str = "train", source: str = ""
) -> FeatureCache:
    """Build a cache from an (E, N, C) or (E, C) float32 array and (E,) integer labels."""
    if layout not in LAYOUTS:
        raise ValidationError(f"unknown layout {layout!r}")
    feats = _load_npy(features_path, ("<f4",))
    labels = _load_npy(labels_path, ("<i4", "<i8"))
    want_rank = 3 if layout == "token_grid" else 2
    if feats.ndim != want_rank:
        raise ValidationError(
            f"rank mismatch: {layout} expects rank-{want_rank} features, got shape {feats.shape}"
        )
    if labels.ndim != 1:
        raise ValidationError(f"labels must be rank 1, got shape {labels.shape}")
    if len(labels) != len(feats):
        raise ValidationError(f"E mismatch: {len(feats)} feature rows vs {len(labels)} labels")
    if labels.size and labels.min() < 0:
        raise ValidationError("label out of range")
    if layout == "pooled":
        feats = feats[:, None, :]
    E, N, C = feats.shape
    S = int(labels.max()) + 1
    manifest = CacheManifest(FORMAT_VERSION, layout, N, C, E, S, split_name, source or str(features_path))
    labels = labels.astype(np.int64)
    _check_payload(manifest, labels, feats)
    return FeatureCache(manifest, labels, feats)


def export_npy(cache: FeatureCache, features_path, labels_path) -> None:
    feats = cache.features
    if cache.manifest.layout == "pooled":
        feats = feats[:, 0, :]
    np.save(features_path, np.ascontiguousarray(feats, dtype="<f4"), allow_pickle=False)
    np.save(labels_path, cache.labels.astype("<i8"), allow_pickle=False)


def generate_synthetic(
    num_classes: int,
    per_class: int,
    N: int,
    C: int,
    cluster_scale: float = 1.0,
    noise_scale: float = 1.0,
    seed: int = 0,
    split_name: str = "train",
) -> FeatureCache:
    """Class-conditional Gaussian token features.

    The class means depend only on ``seed``, so caches generated with the same
    seed and different ``split_name`` share their classes but not their noise.
    """
    if min(num_classes, per_class, N, C) < 1:
        raise ValidationError("all counts must be positive")
    if cluster_scale < 0 or noise_scale < 0:
        raise ValidationError("scales must be non-negative")
    means = generator(make_key("synthetic-means", seed)).normal(
        0.0, cluster_scale, size=(num_classes, C)
    )
    noise = generator(make_key("synthetic-noise", seed, split_name)).normal(
        0.0, noise_scale, size=(num_classes * per_class, N, C)
    )
    labels = np.repeat(np.arange(num_classes), per_class)
    features = (means[labels][:, None, :] + noise).astype(np.float32)
    manifest = CacheManifest(
        FORMAT_VERSION,
        "token_grid",
        N,
        C,
        len(labels),
        num_classes,
        split_name,
        f"synthetic(seed={seed}, cluster_scale={cluster_scale}, noise_scale={noise_scale})",
    )
    return FeatureCache(manifest, labels, features)


def sample_few_shot(cache: FeatureCache, k: int, seed: int) -> FewShotSample:
    """Draw exactly ``k`` distinct examples per class, keyed by ``(seed, class)``."""
    if k < 1:
        raise ValidationError("k must be positive")
    picked = []
    for c in range(cache.num_classes):
        members = np.flatnonzero(cache.labels == c)
        if len(members) < k:
            raise ValidationError(f"class {c} has {len(members)} examples, fewer than k={k}")
        rng = generator(make_key("few-shot", seed, c))
        picked.append(members[rng.choice(len(members), size=k, replace=False)])
    return FewShotSample(k, seed, np.concatenate(picked))


def split_cache(cache: FeatureCache, fractions=(0.6, 0.2, 0.2), seed: int = 0):
    """Deterministic per-class partition into (train, val, test) caches."""
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise ValidationError("fractions must be three positive numbers")
    total = sum(fractions)
    parts = ([], [], [])
    for c in range(cache.num_classes):
        members = np.flatnonzero(cache.labels == c)
        members = members[generator(make_key("split", seed, c)).permutation(len(members))]
        n_train = int(round(len(members) * fractions[0] / total))
        n_val = int(round(len(members) * fractions[1] / total))
        parts[0].append(members[:n_train])
        parts[1].append(members[n_train : n_train + n_val])
        parts[2].append(members[n_train + n_val :])
    out = []
    for name, idx in zip(("train", "val", "test"), parts):
        idx = np.sort(np.concatenate(idx))
        if len(idx) == 0:
            raise ValidationError(f"split {name!r} would be empty")
        out.append(cache.subset(idx, split_name=name))
    return tuple(out)
