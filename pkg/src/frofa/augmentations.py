"""Image-style augmentations that operate on feature grids.

Grids are ``(H, W, C)`` arrays. "Mapped" operations expect values in [0, 1]
(see :mod:`frofa.core`); "raw" and "structural" operations work on the original
feature values. Every stochastic operation draws from the ``rng`` it is given
and accepts a forced value (``z``, ``fire`` ...) that bypasses sampling.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import ValidationError

VARIANTS = ("default", "channel", "channel2")

GEOMETRIC = ("rotate", "shear_x", "shear_y", "translate_x", "translate_y")
CROPS = ("crop", "resized_crop", "inception_crop")
KINDS = GEOMETRIC + CROPS + (
    "patch_dropout",
    "channel_dropout",
    "brightness",
    "contrast",
    "equalize",
    "invert",
    "posterize",
    "sharpness",
    "solarize",
    "uniform_noise",
    "jpeg",
    "mixup",
)

RAW_KINDS = ("solarize", "mixup", "patch_dropout", "channel_dropout", "invert")
STRUCTURAL_KINDS = CROPS + ("patch_dropout",)
SPATIAL_KINDS = GEOMETRIC + CROPS + ("sharpness", "jpeg")
GATED_KINDS = ("equalize", "invert", "solarize", "inception_crop")

# (low, high, integer, low_inclusive). Ranges span the sweep values of each kind.
# A zero magnitude is admitted where it means "no-op" (e.g. brightness v=0).
_DOMAINS = {
    "rotate": (0.0, 90.0, False, True),
    "shear_x": (0.0, 0.7, False, True),
    "shear_y": (0.0, 0.7, False, True),
    "translate_x": (0, 7, True, True),
    "translate_y": (0, 7, True, True),
    "crop": (1, 13, True, True),
    "resized_crop": (16, 42, True, True),
    "inception_crop": (0.0, 1.0, False, True),
    "patch_dropout": (1, 196, True, True),
    "channel_dropout": (0.0, 1.0, False, True),
    "brightness": (0.0, 1.0, False, True),
    "contrast": (1.0, 10.0, False, False),
    "equalize": (0.0, 1.0, False, True),
    "invert": (0.0, 1.0, False, True),
    "sharpness": (0.0, 3.0, False, True),
    "solarize": (0.0, 1.0, False, True),
    "uniform_noise": (0.0, 0.7, False, True),
    "mixup": (0.0, 1.0, False, False),
}
_PAIR_DOMAINS = {"posterize": (1, 8), "jpeg": (1, 100)}

# Channel variants with an established track record; other combinations run but are flagged.
_EVALUATED_VARIANTS = {
    ("brightness", "channel"),
    ("brightness", "channel2"),
    ("contrast", "channel"),
    ("posterize", "channel"),
}

_ZERO_IS_IDENTITY = GEOMETRIC + (
    "inception_crop",
    "channel_dropout",
    "brightness",
    "equalize",
    "invert",
    "sharpness",
    "solarize",
    "uniform_noise",
)


@dataclass(frozen=True)
class AugmentationSpec:
    kind: str
    v: float
    v2: Optional[float] = None
    variant: str = "default"
    invert_in_mapped_space: bool = False
    note: Optional[str] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown augmentation kind {self.kind!r}")
        if self.variant not in VARIANTS:
            raise ValidationError(f"unknown variant {self.variant!r}")
        if self.kind in _PAIR_DOMAINS:
            lo, hi = _PAIR_DOMAINS[self.kind]
            if self.v2 is None:
                raise ValidationError(f"{self.kind} needs two parameters v, v2")
            if int(self.v) != self.v or int(self.v2) != self.v2:
                raise ValidationError(f"{self.kind} parameters must be integers")
            if not lo <= self.v < self.v2 <= hi:
                raise ValidationError(
                    f"{self.kind} requires {lo} <= v1 < v2 <= {hi}, got ({self.v}, {self.v2})"
                )
            return
        if self.v2 is not None:
            raise ValidationError(f"{self.kind} takes a single parameter")
        lo, hi, integer, lo_inclusive = _DOMAINS[self.kind]
        if integer and int(self.v) != self.v:
            raise ValidationError(f"{self.kind} parameter must be an integer, got {self.v}")
        ok_lo = self.v >= lo if lo_inclusive else self.v > lo
        if not (ok_lo and self.v <= hi):
            bracket = "[" if lo_inclusive else "("
            raise ValidationError(
                f"{self.kind} parameter {self.v} outside sweep domain {bracket}{lo}, {hi}]"
            )
        if self.kind in ("patch_dropout", "mixup") and self.variant != "default":
            raise ValidationError(f"{self.kind} has no channel variant")

    @property
    def space(self) -> str:
        if self.kind in STRUCTURAL_KINDS:
            return "structural"
        if self.kind == "invert" and self.invert_in_mapped_space:
            return "mapped"
        if self.kind in RAW_KINDS:
            return "raw"
        return "mapped"

    @property
    def is_identity(self) -> bool:
        """True when the parameters make the operation an exact no-op."""
        return self.kind in _ZERO_IS_IDENTITY and self.v == 0

    @property
    def is_evaluated_setting(self) -> bool:
        return self.variant == "default" or (self.kind, self.variant) in _EVALUATED_VARIANTS

    def to_json(self) -> dict:
        out = {"kind": self.kind, "v": self.v, "v2": self.v2, "variant": self.variant}
        if self.invert_in_mapped_space:
            out["invert_in_mapped_space"] = True
        if not self.is_evaluated_setting:
            out["unevaluated_variant"] = True
        if self.note:
            out["probability_space_note"] = self.note
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "AugmentationSpec":
        unknown = set(obj) - {
            "kind", "v", "v2", "variant", "invert_in_mapped_space",
            "probability_space_note", "unevaluated_variant",
        }
        if unknown:
            raise ValidationError(f"unknown augmentation fields {sorted(unknown)}")
        if "kind" not in obj or "v" not in obj:
            raise ValidationError("augmentation needs 'kind' and 'v'")
        return cls(
            kind=obj["kind"],
            v=obj["v"],
            v2=obj.get("v2"),
            variant=obj.get("variant", "default"),
            invert_in_mapped_space=bool(obj.get("invert_in_mapped_space", False)),
            note=obj.get("probability_space_note"),
        )


# ---------------------------------------------------------------- resampling


def _bilinear_sample(grid, rows, cols):
    """Sample ``grid`` (H, W, C) at fractional (rows, cols); outside reads as 0."""
    H, W = grid.shape[:2]
    r0 = np.floor(rows).astype(np.int64)
    c0 = np.floor(cols).astype(np.int64)
    dr = (rows - r0)[..., None]
    dc = (cols - c0)[..., None]
    out = np.zeros(rows.shape + grid.shape[2:], dtype=grid.dtype)
    for rr, wr in ((r0, 1.0 - dr), (r0 + 1, dr)):
        for cc, wc in ((c0, 1.0 - dc), (c0 + 1, dc)):
            inside = (rr >= 0) & (rr < H) & (cc >= 0) & (cc < W)
            vals = grid[np.clip(rr, 0, H - 1), np.clip(cc, 0, W - 1)]
            out += np.where(inside[..., None], wr * wc * vals, 0.0)
    return out


def resize_bilinear(grid, out_h: int, out_w: int):
    """Half-pixel-centre bilinear resize with edge clamping."""
    H, W = grid.shape[:2]
    rows = (np.arange(out_h) + 0.5) * (H / out_h) - 0.5
    cols = (np.arange(out_w) + 0.5) * (W / out_w) - 0.5
    rows = np.clip(rows, 0, H - 1)
    cols = np.clip(cols, 0, W - 1)
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return _bilinear_sample(grid, rr, cc)


def per_channel(fn, grid, rng):
    """Apply ``fn(channel_grid, rng)`` channel by channel, sharing one stream."""
    return np.concatenate([fn(grid[..., c : c + 1], rng) for c in range(grid.shape[-1])], axis=-1)


def _sample_values(rng, per_channel, C, sampler, z):
    if z is not None:
        return np.broadcast_to(np.asarray(z, dtype=np.float64), (C if per_channel else 1,))
    return sampler(C if per_channel else 1)


# ---------------------------------------------------------------- geometric


def geometric(kind: str, v, grid, rng, z=None):
    """Rotate (degrees), shear or translate every channel by the same amount.

    Translation is an integer shift ``z`` in {0..v} with a random sign; a forced
    ``z`` is used as a signed shift.
    """
    H, W = grid.shape[:2]
    if kind in ("translate_x", "translate_y"):
        if z is None:
            z = int(rng.integers(0, int(v) + 1)) * (1 if rng.random() < 0.5 else -1)
        return _translate(grid, int(z), axis=1 if kind == "translate_x" else 0)

    ii, jj = np.meshgrid(np.arange(H, dtype=np.float64), np.arange(W, dtype=np.float64), indexing="ij")
    if kind == "rotate":
        if z is None:
            z = rng.uniform(-v, v)
        theta = math.radians(z)
        cy, cx = (H - 1) / 2.0, (W - 1) / 2.0
        y, x = ii - cy, jj - cx
        rows = cy + math.sin(theta) * x + math.cos(theta) * y
        cols = cx + math.cos(theta) * x - math.sin(theta) * y
    elif kind == "shear_x":
        if z is None:
            z = rng.uniform(0.0, v)
        rows, cols = ii, jj + z * ii
    elif kind == "shear_y":
        if z is None:
            z = rng.uniform(0.0, v)
        rows, cols = ii + z * jj, jj
    else:
        raise ValidationError(f"{kind} is not a geometric augmentation")
    return _bilinear_sample(grid, rows, cols)


def _translate(grid, shift: int, axis: int):
    out = np.zeros_like(grid)
    n = grid.shape[axis]
    if abs(shift) >= n:
        return out
    src = [slice(None)] * grid.ndim
    dst = [slice(None)] * grid.ndim
    if shift >= 0:
        src[axis], dst[axis] = slice(0, n - shift), slice(shift, n)
    else:
        src[axis], dst[axis] = slice(-shift, n), slice(0, n + shift)
    out[tuple(dst)] = grid[tuple(src)]
    return out


# ---------------------------------------------------------------- crop & drop


def crop_family(kind: str, v, grid, rng, fire=None):
    H, W = grid.shape[:2]
    if kind == "crop":
        v = int(v)
        if v > H or v > W:
            raise ValidationError(f"crop size {v} exceeds grid {H}x{W}")
        r = int(rng.integers(0, H - v + 1))
        c = int(rng.integers(0, W - v + 1))
        return grid[r : r + v, c : c + v]
    if kind == "resized_crop":
        v = int(v)
        if v < H or v < W:
            raise ValidationError(f"resize target {v} is smaller than grid {H}x{W}")
        big = resize_bilinear(grid, v, v)
        r = int(rng.integers(0, v - H + 1))
        c = int(rng.integers(0, v - W + 1))
        return big[r : r + H, c : c + W]
    if kind == "inception_crop":
        if fire is None:
            fire = rng.random() < v
        if not fire:
            return grid
        h, w, r, c = _inception_box(H, W, rng)
        return resize_bilinear(grid[r : r + h, c : c + w], H, W)
    raise ValidationError(f"{kind} is not a crop augmentation")


def _inception_box(H, W, rng, area_range=(0.05, 1.0), ratio_range=(3 / 4, 4 / 3), attempts=10):
    area = H * W
    log_lo, log_hi = math.log(ratio_range[0]), math.log(ratio_range[1])
    for _ in range(attempts):
        target = area * rng.uniform(*area_range)
        ratio = math.exp(rng.uniform(log_lo, log_hi))
        w = int(round(math.sqrt(target * ratio)))
        h = int(round(math.sqrt(target / ratio)))
        if 1 <= w <= W and 1 <= h <= H:
            r = int(rng.integers(0, H - h + 1))
            c = int(rng.integers(0, W - w + 1))
            return h, w, r, c
    return H, W, 0, 0


def patch_dropout(v, tokens, rng):
    """Keep ``v`` randomly chosen rows of an (N, C) token matrix, in random order."""
    N = tokens.shape[0]
    v = int(v)
    if not 1 <= v <= N:
        raise ValidationError(f"patch_dropout keeps {v} of {N} patches; need 1 <= v <= N")
    return tokens[rng.permutation(N)[:v]]


def channel_dropout(v, tokens, rng, mask=None):
    """Zero each channel with probability ``v`` (no rescaling of survivors)."""
    if mask is None:
        mask = rng.random(tokens.shape[-1]) < v
    return np.where(np.asarray(mask, dtype=bool), 0.0, tokens).astype(tokens.dtype)


# ---------------------------------------------------------------- stylistic


def brightness(v, grid, rng, variant="default", z=None):
    per_channel = variant != "default"
    zs = _sample_values(rng, per_channel, grid.shape[-1], lambda n: rng.uniform(-v, v, size=n), z)
    return np.clip(grid + zs, 0.0, 1.0)


def contrast(v, grid, rng, variant="default", z=None):
    """Plain multiplication by z ~ U(1/v, v); no mean centring."""
    per_channel = variant != "default"
    zs = _sample_values(rng, per_channel, grid.shape[-1], lambda n: rng.uniform(1.0 / v, v, size=n), z)
    return np.clip(grid * zs, 0.0, 1.0)


def posterize(v1, v2, grid, rng, variant="default", z=None):
    """Drop the ``z`` lowest bits of the 8-bit quantized grid, z uniform in {v1..v2}."""
    per_channel = variant != "default"
    n = grid.shape[-1] if per_channel else 1
    if z is None:
        zs = rng.integers(int(v1), int(v2) + 1, size=n)
    else:
        zs = np.broadcast_to(np.asarray(z, dtype=np.int64), (n,))
    q = np.round(np.clip(grid, 0.0, 1.0) * 255.0).astype(np.int64)
    q = (q >> zs) << zs
    return q / 255.0


def equalize_levels(q, levels: int):
    """Cumulative-histogram equalization of integer levels in {0..levels-1}."""
    hist = np.bincount(q.ravel(), minlength=levels)
    nonzero = hist[hist > 0]
    step = (int(nonzero.sum()) - int(nonzero[-1])) // (levels - 1)
    if step == 0:
        return q
    lut = (np.cumsum(hist) + step // 2) // step
    lut = np.clip(np.concatenate([[0], lut[:-1]]), 0, levels - 1)
    return lut[q]


def equalize(v, grid, rng, fire=None, levels: int = 196):
    """With probability ``v`` equalize over ``levels`` bins computed on the whole grid."""
    if fire is None:
        fire = rng.random() < v
    if not fire:
        return grid
    top = levels - 1
    q = np.round(np.clip(grid, 0.0, 1.0) * top).astype(np.int64)
    return equalize_levels(q, levels) / top


def invert(v, tensor, rng, fire=None, mapped=False):
    """Sign flip with probability ``v`` (``1 - x`` when working in mapped space)."""
    if fire is None:
        fire = rng.random() < v
    if not fire:
        return tensor
    return 1.0 - tensor if mapped else -tensor


def sharpness(v, grid, rng, z=None):
    """Blend towards a 3x3 box-filtered grid: ``x + z * (smooth - x)``, z ~ U(0, v)."""
    if grid.shape[0] < 3 or grid.shape[1] < 3:
        raise ValidationError("sharpness needs a spatial grid of at least 3x3")
    if z is None:
        z = rng.uniform(0.0, v)
    smooth = ndimage.uniform_filter(grid, size=(3, 3, 1), mode="nearest")
    return np.clip(grid + z * (smooth - grid), 0.0, 1.0)


def solarize(v, tensor, rng, fire=None, f_min=None, f_max=None):
    """Raw-space solarize: values below ``f_min/2`` become ``f_min - x``; values
    above ``f_max/2`` become ``f_max - x``."""
    if fire is None:
        fire = rng.random() < v
    if not fire:
        return tensor
    lo = tensor.min() if f_min is None else f_min
    hi = tensor.max() if f_max is None else f_max
    out = np.where(tensor < 0.5 * lo, lo - tensor, tensor)
    return np.where(tensor > 0.5 * hi, hi - tensor, out)


def uniform_noise(v, tensor, rng, z=None):
    if z is None:
        z = rng.uniform(-v, v, size=tensor.shape)
    return np.clip(tensor + z, 0.0, 1.0)


# ---------------------------------------------------------------- other


def _jpeg_channel(channel, quality: int):
    q = np.round(np.clip(channel, 0.0, 1.0) * 255.0).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(q, mode="L").save(buf, format="JPEG", quality=quality)
    buf.seek(0)
    with Image.open(buf) as im:
        return np.asarray(im, dtype=np.float64) / 255.0


def jpeg(v1, v2, grid, rng, variant="default", z=None):
    """Round-trip each channel through an 8-bit grayscale JPEG at quality z ~ U(v1, v2)."""
    per_channel = variant != "default"
    C = grid.shape[-1]
    qs = _sample_values(rng, per_channel, C, lambda n: rng.uniform(v1, v2, size=n), z)
    qs = np.broadcast_to(qs, (C,))
    out = np.empty(grid.shape, dtype=np.float64)
    for c in range(C):
        out[..., c] = _jpeg_channel(grid[..., c], int(np.clip(round(float(qs[c])), 1, 100)))
    return out


def mixup(v, features, labels, rng, z=None, perm=None):
    """Mix each example with a random partner: ``z*f_i + (1-z)*f_j``, z ~ Beta(v, v).

    ``features`` is (B, ...) and ``labels`` is (B, S) probability vectors; the
    same z mixes both.
    """
    B = features.shape[0]
    if B < 2:
        raise ValidationError("mixup needs a batch of at least two examples")
    if perm is None:
        perm = rng.permutation(B)
    if z is None:
        z = rng.beta(v, v, size=B)
    z = np.broadcast_to(np.asarray(z, dtype=np.float64), (B,))
    zf = z.reshape((B,) + (1,) * (features.ndim - 1))
    zl = z[:, None]
    mixed_f = zf * features + (1.0 - zf) * features[perm]
    mixed_l = zl * labels + (1.0 - zl) * labels[perm]
    return mixed_f.astype(features.dtype), mixed_l
