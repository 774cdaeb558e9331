"""Augmentation pipelines: single ops, fixed sequences and RandAugment/TrivialAugment-style samplers."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .augmentations import AugmentationSpec, mixup
from .core import apply_frofa
from .errors import ValidationError
from .rng import Key, fold_in, generator

MODES = ("single", "sequential", "rand_augment_star", "trivial_augment_star")

# Best settings of the three strongest feature augmentations.
BRIGHTNESS_C2 = AugmentationSpec("brightness", 1.0, variant="channel2")
CONTRAST = AugmentationSpec("contrast", 5.0)
POSTERIZE_C = AugmentationSpec("posterize", 1, 8, variant="channel")

POOLS = {
    "top3": (BRIGHTNESS_C2, CONTRAST, POSTERIZE_C),
    "top2": (BRIGHTNESS_C2, POSTERIZE_C),
}


@dataclass(frozen=True)
class Pipeline:
    mode: str
    ops: Tuple[AugmentationSpec, ...] = ()
    pool: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "ops", tuple(self.ops))
        if self.mode not in MODES:
            raise ValidationError(f"unknown pipeline mode {self.mode!r}")
        if self.pool is not None and self.pool not in POOLS:
            raise ValidationError(f"unknown pool {self.pool!r}; expected top2 or top3")
        if self.mode == "single" and len(self.ops) != 1:
            raise ValidationError("single mode takes exactly one op")
        if self.mode == "sequential" and len(self.ops) != 2:
            raise ValidationError("sequential mode takes exactly two ops")
        if self.mode in ("rand_augment_star", "trivial_augment_star"):
            if not self.candidates:
                raise ValidationError(f"{self.mode} needs a non-empty pool")
            if any(op.kind == "mixup" for op in self.candidates):
                raise ValidationError("mixup cannot be drawn per example")

    @property
    def candidates(self) -> Tuple[AugmentationSpec, ...]:
        """The pool sampled by RA*/TA*: a named pool, else ``ops``."""
        return POOLS[self.pool] if self.pool else self.ops

    @property
    def is_identity(self) -> bool:
        return all(op.is_identity for op in self.candidates)

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "ops": [op.to_json() for op in self.ops],
            "pool": self.pool,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Pipeline":
        if not isinstance(obj, dict) or "mode" not in obj:
            raise ValidationError("pipeline JSON needs a 'mode'")
        ops = tuple(AugmentationSpec.from_json(o) for o in obj.get("ops", []))
        return cls(obj["mode"], ops, obj.get("pool"))

    @property
    def pipeline_id(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha1(blob).hexdigest()[:10]


def single(spec: AugmentationSpec) -> Pipeline:
    return Pipeline("single", (spec,))


def draw_ops(pipeline: Pipeline, rng_key: Key) -> Tuple[AugmentationSpec, ...]:
    """The ops applied to one example, in application order."""
    if pipeline.mode in ("single", "sequential"):
        return pipeline.ops
    pool = pipeline.candidates
    rng = generator(fold_in(rng_key, "select"))
    if pipeline.mode == "trivial_augment_star":
        return (pool[int(rng.integers(0, len(pool)))],)
    length = int(rng.integers(1, len(pool) + 1))
    order = rng.choice(len(pool), size=length, replace=False)
    return tuple(pool[i] for i in order)


def apply_pipeline(pipeline: Pipeline, example: np.ndarray, rng_key: Key) -> np.ndarray:
    """Augment one (N, C) example. Mixup ops must go through :func:`augment_batch`."""
    for i, op in enumerate(draw_ops(pipeline, rng_key)):
        example = apply_frofa(example, op, fold_in(rng_key, i))
    return example


def augment_batch(pipeline: Pipeline, tokens: np.ndarray, targets: np.ndarray, rng_key: Key):
    """Augment a (B, N, C) batch with (B, S) targets.

    Per-example ops use the key ``rng_key + (slot, op_index)``; a mixup op mixes
    the whole batch with ``rng_key + ("mixup", op_index)``.
    """
    B = tokens.shape[0]
    if pipeline.mode not in ("single", "sequential"):
        out = [apply_pipeline(pipeline, tokens[b], fold_in(rng_key, b)) for b in range(B)]
        return np.stack(out), targets
    for i, op in enumerate(pipeline.ops):
        if op.kind == "mixup":
            tokens, targets = mixup(op.v, tokens, targets, generator(fold_in(rng_key, "mixup", i)))
        elif not op.is_identity:
            tokens = np.stack(
                [apply_frofa(tokens[b], op, fold_in(rng_key, b, i)) for b in range(B)]
            )
    return tokens, targets
