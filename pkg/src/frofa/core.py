"""Feature <-> image value-range mappings and the frozen feature augmentation.

A frozen feature augmentation is ``to_feature . image_aug . to_image``: the
(N, C) token matrix is reshaped to a sqrt(N) x sqrt(N) x C grid, min-max
mapped to [0, 1], augmented like an image and mapped back. Three variants
control how augmentation values and normalization statistics are shared:

``default``   one sampled value for the tensor, global min/max
``channel``   one sampled value per channel, global min/max
``channel2``  one sampled value per channel, per-channel min/max
"""

from __future__ import annotations

import math
from dataclasses import dataclass
import numpy as np

from . import augmentations as aug
from .errors import ValidationError
from .rng import Key, generator


@dataclass(frozen=True)
class NormStats:
    f_min: np.ndarray
    f_max: np.ndarray
    scope: str  # "global" or "per_channel"

    @property
    def span(self) -> np.ndarray:
        return self.f_max - self.f_min


@dataclass(frozen=True)
class MappedFeature:
    grid: np.ndarray
    stats: NormStats


def grid_side(N: int) -> int:
    side = math.isqrt(N)
    if side * side != N:
        raise ValidationError(f"N={N} is not a perfect square; spatial ops need a square grid")
    return side


def to_grid(tokens: np.ndarray) -> np.ndarray:
    """(N, C) -> (sqrt(N), sqrt(N), C); token n1*sqrt(N) + n2 lands at [n1, n2]."""
    side = grid_side(tokens.shape[0])
    return tokens.reshape(side, side, tokens.shape[1])


def to_tokens(grid: np.ndarray) -> np.ndarray:
    return grid.reshape(-1, grid.shape[-1])


def compute_stats(grid: np.ndarray, scope: str = "global") -> NormStats:
    if scope == "global":
        return NormStats(np.asarray(grid.min()), np.asarray(grid.max()), scope)
    if scope == "per_channel":
        return NormStats(grid.min(axis=(0, 1)), grid.max(axis=(0, 1)), scope)
    raise ValidationError(f"unknown scope {scope!r}")


def feature_to_image(grid: np.ndarray, scope: str = "global") -> MappedFeature:
    """Min-max map to [0, 1]. A constant scope unit maps to zeros."""
    stats = compute_stats(grid, scope)
    span = stats.span
    safe = np.where(span == 0, 1.0, span)
    x = np.clip((grid - stats.f_min) / safe, 0.0, 1.0)
    return MappedFeature(x, stats)


def image_to_feature(mapped: MappedFeature) -> np.ndarray:
    s = mapped.stats
    return mapped.grid * s.span + s.f_min


def _scope_for(variant: str) -> str:
    return "per_channel" if variant == "channel2" else "global"


def _mapped_op(spec: aug.AugmentationSpec, x: np.ndarray, rng, z):
    k, v = spec.kind, spec.v
    variant = spec.variant
    if k == "brightness":
        return aug.brightness(v, x, rng, variant, z=z)
    if k == "contrast":
        return aug.contrast(v, x, rng, variant, z=z)
    if k == "posterize":
        return aug.posterize(v, spec.v2, x, rng, variant, z=z)
    if k == "jpeg":
        return aug.jpeg(v, spec.v2, x, rng, variant, z=z)

    if k in aug.GEOMETRIC:
        fn = lambda g, r: aug.geometric(k, v, g, r, z=z)
    elif k == "equalize":
        fn = lambda g, r: aug.equalize(v, g, r, fire=z)
    elif k == "sharpness":
        fn = lambda g, r: aug.sharpness(v, g, r, z=z)
    elif k == "uniform_noise":
        fn = lambda g, r: aug.uniform_noise(v, g, r, z=z)
    elif k == "invert":
        fn = lambda g, r: aug.invert(v, g, r, fire=z, mapped=True)
    else:
        raise ValidationError(f"{k} is not a mapped-space augmentation")
    if variant == "default":
        return fn(x, rng)
    return aug.per_channel(fn, x, rng)


def _raw_op(spec: aug.AugmentationSpec, grid: np.ndarray, rng, z):
    k, v = spec.kind, spec.v
    if k == "solarize":
        if spec.variant == "channel2":
            fn = lambda g, r: aug.solarize(v, g, r, fire=z)
        else:
            lo, hi = grid.min(), grid.max()
            fn = lambda g, r: aug.solarize(v, g, r, fire=z, f_min=lo, f_max=hi)
    elif k == "invert":
        fn = lambda g, r: aug.invert(v, g, r, fire=z)
    elif k == "channel_dropout":
        if spec.variant == "default":
            return aug.channel_dropout(v, grid, rng, mask=z)
        fn = lambda g, r: aug.channel_dropout(v, g, r)
    elif k in aug.CROPS:
        fn = lambda g, r: aug.crop_family(k, v, g, r, fire=z)
    else:
        raise ValidationError(f"{k} is not a raw-space augmentation")
    if spec.variant == "default":
        return fn(grid, rng)
    return aug.per_channel(fn, grid, rng)


def apply_frofa(
    tokens: np.ndarray, spec: aug.AugmentationSpec, rng_key: Key, z=None
) -> np.ndarray:
    """Augment one example's (N, C) token matrix; returns a (N', C) matrix.

    ``z`` forces the augmentation value (or probability gate / mask) instead of
    sampling it. Crop and patch dropout may change N. Mixup mixes pairs of
    examples and is applied at batch level with :func:`frofa.augmentations.mixup`.
    """
    if spec.kind == "mixup":
        raise ValidationError("mixup acts on a batch; use augmentations.mixup")
    if tokens.ndim != 2:
        raise ValidationError(f"expected an (N, C) token matrix, got shape {tokens.shape}")
    if spec.is_identity and z is None:
        return tokens
    rng = generator(rng_key)
    work = tokens.astype(np.float64)

    if spec.kind == "patch_dropout":
        out = aug.patch_dropout(spec.v, work, rng)
    elif spec.kind in aug.SPATIAL_KINDS or spec.space == "mapped":
        # non-spatial mapped ops accept any N through a 1 x N x C view
        grid = to_grid(work) if spec.kind in aug.SPATIAL_KINDS else work[None]
        if spec.space == "mapped":
            mapped = feature_to_image(grid, _scope_for(spec.variant))
            x = np.clip(_mapped_op(spec, mapped.grid, rng, z), 0.0, 1.0)
            grid = image_to_feature(MappedFeature(x, mapped.stats))
        else:
            grid = _raw_op(spec, grid, rng, z)
        out = to_tokens(grid)
    else:
        # token-wise raw ops; a 1 x N x C view keeps the channel axis last
        out = _raw_op(spec, work[None], rng, z)[0]
    return out.astype(tokens.dtype, copy=False)
