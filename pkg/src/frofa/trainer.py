"""Few-shot transfer training of the MAP head on frozen features.

SGD with momentum 0.9, linear warm-up into a cosine decay, global-norm
gradient clipping, decoupled weight decay and per-example feature
augmentation. The best validation checkpoint is kept (early stopping), and
:func:`run_sweep` repeats this over a hyperparameter grid and k-shot replicas.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import map_head
from .errors import TrainingDiverged, ValidationError
from .feature_store import FeatureCache, sample_few_shot
from .linear_probe import RidgeSolution, one_hot, predict
from .map_head import MapHeadParams
from .protocols import Pipeline, augment_batch
from .rng import generator, make_key


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int
    base_lr: float
    total_steps: int
    weight_decay: float = 0.0
    momentum: float = 0.9
    warmup_steps: int = 500
    clip_norm: Optional[float] = 1.0
    seed: int = 0
    pipeline: Optional[Pipeline] = None
    eval_every: Optional[int] = None
    num_heads: Optional[int] = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValidationError("batch_size must be at least 1")
        if self.warmup_steps < 0 or self.total_steps <= self.warmup_steps:
            raise ValidationError(
                f"total_steps ({self.total_steps}) must exceed warmup_steps ({self.warmup_steps})"
            )
        if self.eval_every is not None and self.eval_every < 1:
            raise ValidationError("eval_every must be positive")

    @property
    def eval_interval(self) -> int:
        if self.eval_every is not None:
            return self.eval_every
        return max(100, self.total_steps // 20)

    @property
    def augments(self) -> bool:
        return self.pipeline is not None and not self.pipeline.is_identity

    def echo(self) -> dict:
        out = {
            "batch_size": self.batch_size,
            "base_lr": self.base_lr,
            "total_steps": self.total_steps,
            "weight_decay": self.weight_decay,
            "momentum": self.momentum,
            "warmup_steps": self.warmup_steps,
            "clip_norm": self.clip_norm,
            "seed": self.seed,
            "eval_every": self.eval_interval,
            "num_heads": self.num_heads,
            "pipeline": None if self.pipeline is None else self.pipeline.to_json(),
        }
        return out


@dataclass(frozen=True)
class SweepGrid:
    batch_sizes: tuple = (32, 64, 128, 256, 512)
    learning_rates: tuple = (0.01, 0.03, 0.06, 0.1)
    step_counts: tuple = (1000, 2000, 4000, 8000, 16000)
    weight_decays: Optional[tuple] = None

    @classmethod
    def full(cls, weight_decay_axis: bool = False) -> "SweepGrid":
        return cls(weight_decays=(0.01, 0.001, 0.0001, 0.0) if weight_decay_axis else None)

    @classmethod
    def reduced(cls) -> "SweepGrid":
        return cls((32, 512), (0.01, 0.03), (1000, 16000))

    def points(self):
        """Yields ``(batch_size, lr, steps, weight_decay)`` in a fixed order."""
        decays = self.weight_decays if self.weight_decays is not None else (0.0,)
        return list(itertools.product(self.batch_sizes, self.learning_rates, self.step_counts, decays))

    def __len__(self) -> int:
        return len(self.points())


@dataclass
class Metrics:
    val_history: list = field(default_factory=list)  # [(step, top1)]
    best_step: int = 0
    best_val_top1: float = 0.0
    final_val_top1: float = 0.0
    test_top1: Optional[float] = None
    final_loss: float = float("nan")
    config: dict = field(default_factory=dict)
    wall_s: float = 0.0
    step_times: list = field(default_factory=list)  # seconds per optimizer step


def lr_at(step: int, config: TrainConfig) -> float:
    if step < config.warmup_steps:
        return config.base_lr * step / config.warmup_steps
    frac = (step - config.warmup_steps) / (config.total_steps - config.warmup_steps)
    return 0.5 * config.base_lr * (1.0 + math.cos(math.pi * frac))


def global_norm(grads: dict) -> float:
    return math.sqrt(sum(float(np.vdot(g, g)) for g in grads.values()))


def clip_by_global_norm(grads: dict, max_norm: Optional[float]):
    norm = global_norm(grads)
    if max_norm is None or norm <= max_norm:
        return grads, norm
    scale = np.float32(max_norm / norm)
    return {k: g * scale for k, g in grads.items()}, norm


class _FlatLayout:
    """Packs a tensor dict into one float32 vector so the optimizer update is a
    handful of vector ops instead of one pass per tensor."""

    def __init__(self, tensors: dict):
        self.names = list(tensors)
        self.shapes = [tensors[n].shape for n in self.names]
        sizes = [tensors[n].size for n in self.names]
        self.bounds = np.cumsum([0] + sizes)
        decay = np.ones(self.bounds[-1], dtype=np.float32)
        for i, name in enumerate(self.names):
            if name in map_head.NO_DECAY:
                decay[self.bounds[i] : self.bounds[i + 1]] = 0.0
        self.decay = decay

    def pack(self, tensors: dict) -> np.ndarray:
        return np.concatenate([tensors[n].ravel() for n in self.names]).astype(np.float32, copy=False)

    def unpack(self, flat: np.ndarray) -> dict:
        b = self.bounds
        return {n: flat[b[i] : b[i + 1]].reshape(s) for i, (n, s) in enumerate(zip(self.names, self.shapes))}


_LAYOUTS = {}


def _layout_for(params: MapHeadParams) -> _FlatLayout:
    sig = tuple((k, v.shape) for k, v in params.tensors.items())
    if sig not in _LAYOUTS:
        _LAYOUTS[sig] = _FlatLayout(params.tensors)
    return _LAYOUTS[sig]


def init_momentum(params: MapHeadParams) -> dict:
    return {k: np.zeros_like(v) for k, v in params.tensors.items()}


class _FlatSGD:
    """SGD-momentum state held as two flat vectors (weights and momentum).

    ``m <- mu m + g``, ``w <- w - lr m - lr wd w`` (biases and layer-norm
    parameters are not decayed), with ``g`` clipped to a global norm first.
    """

    def __init__(self, params: MapHeadParams, momentum: dict, config: TrainConfig):
        self.layout = _layout_for(params)
        self.num_heads = params.num_heads
        self.config = config
        self.w = self.layout.pack(params.tensors)
        self.m = self.layout.pack(momentum)
        self.params = MapHeadParams(self.num_heads, self.layout.unpack(self.w))

    def step(self, tokens, targets, step: int, weights=None) -> float:
        config = self.config
        loss, grads = map_head.backward(self.params, tokens, targets, weights)
        if not math.isfinite(loss):
            raise TrainingDiverged(
                f"non-finite loss {loss} at step {step} (lr={lr_at(step, config):.4g}, config={config.echo()})"
            )
        g = self.layout.pack(grads)
        norm = math.sqrt(float(np.dot(g, g)))
        if config.clip_norm is not None and norm > config.clip_norm:
            g = g * np.float32(config.clip_norm / norm)
        lr = np.float32(lr_at(step, config))
        self.m = np.float32(config.momentum) * self.m + g
        update = lr * self.m
        if config.weight_decay:
            update += (lr * np.float32(config.weight_decay)) * (self.layout.decay * self.w)
        # a fresh array each step, so earlier ``params`` snapshots stay valid
        self.w = self.w - update
        self.params = MapHeadParams(self.num_heads, self.layout.unpack(self.w))
        return loss

    @property
    def momentum(self) -> dict:
        return self.layout.unpack(self.m.copy())


def train_step(params: MapHeadParams, momentum: dict, tokens, targets, config: TrainConfig, step: int, weights=None):
    """One SGD-momentum update; returns ``(params, momentum, loss)`` without
    modifying the inputs."""
    opt = _FlatSGD(params, momentum, config)
    loss = opt.step(tokens, targets, step, weights)
    return opt.params, opt.momentum, loss


class EpochShuffler:
    """Endless stream of example indices: concatenated random permutations."""

    def __init__(self, n: int, key):
        self.n = n
        self.rng = generator(key)
        self.buf = np.empty(0, dtype=np.int64)
        self.pos = 0

    def take(self, count: int) -> np.ndarray:
        if len(self.buf) - self.pos < count:
            # whole epochs at a time; the stream is the same whatever the chunking
            epochs = max(-(-(count - (len(self.buf) - self.pos)) // self.n) + 1, 4096 // self.n)
            perms = np.argsort(self.rng.random((epochs, self.n)), axis=1, kind="stable").ravel()
            self.buf = np.concatenate([self.buf[self.pos :], perms])
            self.pos = 0
        out = self.buf[self.pos : self.pos + count]
        self.pos += count
        return out


def _split_arrays(data):
    if isinstance(data, FeatureCache):
        return data.features, data.labels
    features, labels = data
    return np.asarray(features), np.asarray(labels)


def evaluate_top1(model, eval_set) -> float:
    """Top-1 accuracy of a MAP head or ridge probe; ties go to the smallest class."""
    features, labels = _split_arrays(eval_set)
    if len(labels) == 0:
        raise ValidationError("evaluation set is empty")
    if isinstance(model, RidgeSolution):
        pooled = eval_set.pooled() if isinstance(eval_set, FeatureCache) else features
        if pooled.ndim == 3:
            pooled = pooled.mean(axis=1)
        pred = predict(model, pooled)
    else:
        pred = np.argmax(map_head.logits_of(model, features), axis=-1)
    return float(np.mean(pred == labels))


def train(config: TrainConfig, train_set, val_set, num_classes: Optional[int] = None):
    """Train from scratch; returns ``(best_params, metrics)`` where the params
    come from the evaluation step with the highest validation top-1 (earliest
    on ties). Evaluations run at step 0, every ``eval_interval`` steps and at
    the final step."""
    t0 = time.perf_counter()
    features, labels = _split_arrays(train_set)
    if len(labels) == 0:
        raise ValidationError("training set is empty")
    if num_classes is None:
        num_classes = train_set.num_classes if isinstance(train_set, FeatureCache) else int(labels.max()) + 1
    targets_all = one_hot(labels, num_classes).astype(np.float32)
    features = features.astype(np.float32, copy=False)

    params = map_head.init(features.shape[-1], num_classes, config.num_heads, seed=config.seed)
    opt = _FlatSGD(params, init_momentum(params), config)
    shuffler = EpochShuffler(len(labels), make_key("shuffle", config.seed))
    metrics = Metrics(config=config.echo())
    best = None

    def evaluate(step):
        nonlocal best
        acc = evaluate_top1(opt.params, val_set)
        metrics.val_history.append((step, acc))
        if best is None or acc > metrics.best_val_top1:
            best = opt.params
            metrics.best_step, metrics.best_val_top1 = step, acc

    evaluate(0)
    B = config.batch_size
    loss = float("nan")
    for step in range(config.total_steps):
        t_step = time.perf_counter()
        idx = shuffler.take(B)
        if config.augments:
            tokens, targets = augment_batch(
                config.pipeline,
                features[idx],
                targets_all[idx],
                make_key("augment", config.seed, step),
            )
            loss = opt.step(tokens, targets, step)
        else:
            # repeated examples in a batch collapse into weights (mean semantics)
            counts = np.bincount(idx, minlength=len(labels))
            rows = np.flatnonzero(counts)
            weights = (counts[rows] / B).astype(np.float32)
            loss = opt.step(features[rows], targets_all[rows], step, weights)
        metrics.step_times.append(time.perf_counter() - t_step)
        done = step + 1
        if done % config.eval_interval == 0 or done == config.total_steps:
            evaluate(done)

    metrics.final_val_top1 = metrics.val_history[-1][1]
    metrics.final_loss = float(loss)
    metrics.wall_s = time.perf_counter() - t0
    return best, metrics


# ---------------------------------------------------------------- sweeps


def config_hash(obj) -> str:
    return hashlib.sha1(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:12]


@dataclass
class SweepResult:
    records: list  # one dict per (shot, seed, config)
    selected: list  # one dict per (shot, seed)
    summary: dict  # shot -> {"mean": .., "stderr": .., "n": ..}
    timings: list
    config_hash: str


_WORKER_DATA = {}


def replica_seed(base_seed: int, seed: int) -> int:
    """Seed of one k-shot replica; equals ``seed`` when ``base_seed`` is 0."""
    return base_seed * 1_000_003 + seed


def _init_worker(train_pool, val_set, test_set):
    _WORKER_DATA.update(train_pool=train_pool, val_set=val_set, test_set=test_set)


def _run_task(task):
    shot, seed, point, pipeline_json, base_seed, extra, checkpoint_dir = task
    bs, lr, steps, wd = point
    pipeline = Pipeline.from_json(pipeline_json) if pipeline_json else None
    pool = _WORKER_DATA["train_pool"]
    run_seed = replica_seed(base_seed, seed)
    sample = sample_few_shot(pool, shot, run_seed)
    train_set = pool.subset(sample.indices)
    config = TrainConfig(
        batch_size=bs,
        base_lr=lr,
        total_steps=steps,
        weight_decay=wd,
        seed=run_seed,
        pipeline=pipeline,
        **extra,
    )
    params, metrics = train(config, train_set, _WORKER_DATA["val_set"], pool.num_classes)
    test_top1 = evaluate_top1(params, _WORKER_DATA["test_set"])
    chash = config_hash(config.echo())
    if checkpoint_dir is not None:
        map_head.save_params(params, Path(checkpoint_dir) / f"shot{shot}_seed{seed}_{chash}.bin")
    record = {
        "shot": shot,
        "seed": seed,
        "batch_size": bs,
        "lr": lr,
        "steps": steps,
        "weight_decay": wd,
        "pipeline_id": pipeline.pipeline_id if pipeline else "none",
        "val_top1": metrics.best_val_top1,
        "final_val_top1": metrics.final_val_top1,
        "test_top1": test_top1,
        "best_step": metrics.best_step,
        "config_hash": chash,
    }
    return record, metrics.wall_s


def standard_error(values: Sequence[float]) -> float:
    if len(values) < 2:
        return 0.0
    return float(np.std(values, ddof=1) / math.sqrt(len(values)))


def select_per_replica(records, shots, seeds):
    """Pick the record with the best validation top-1 for every (shot, seed)
    (first in ``records`` order on ties); summarise the picks' test top-1 per
    shot as mean and standard error. Returns ``(selected, summary)``."""
    selected, summary = [], {}
    for shot in shots:
        tests = []
        for seed in seeds:
            group = [r for r in records if r["shot"] == shot and r["seed"] == seed]
            if not group:
                raise ValidationError(f"no records for shot={shot}, seed={seed}")
            best = group[0]
            for r in group[1:]:
                if r["val_top1"] > best["val_top1"]:
                    best = r
            selected.append(best)
            tests.append(best["test_top1"])
        summary[shot] = {"mean": float(np.mean(tests)), "stderr": standard_error(tests), "n": len(tests)}
    return selected, summary


def run_sweep(
    grid: SweepGrid,
    pipeline: Optional[Pipeline],
    train_pool: FeatureCache,
    val_set: FeatureCache,
    test_set: FeatureCache,
    shots: Sequence[int] = (1, 5, 10, 25),
    seeds: Sequence[int] = (0, 1, 2, 3, 4),
    workers: int = 1,
    base_seed: int = 0,
    checkpoint_dir=None,
    **train_kwargs,
) -> SweepResult:
    """Train every grid point on every k-shot replica, select per replica by
    validation top-1 (first grid point on ties) and summarise the selected test
    top-1 as mean and standard error over replicas."""
    pipeline_json = pipeline.to_json() if pipeline else None
    points = grid.points()
    tasks = [
        (shot, seed, point, pipeline_json, base_seed, train_kwargs, checkpoint_dir)
        for shot in shots
        for seed in seeds
        for point in points
    ]
    if workers > 1:
        with ProcessPoolExecutor(
            max_workers=workers, initializer=_init_worker, initargs=(train_pool, val_set, test_set)
        ) as ex:
            outputs = list(ex.map(_run_task, tasks, chunksize=1))
    else:
        _init_worker(train_pool, val_set, test_set)
        outputs = [_run_task(t) for t in tasks]

    records = [r for r, _ in outputs]
    timings = [
        {"shot": r["shot"], "seed": r["seed"], "config_hash": r["config_hash"], "wall_s": w}
        for r, w in outputs
    ]
    selected, summary = select_per_replica(records, shots, seeds)
    sweep_echo = {
        "grid": [list(p) for p in points],
        "pipeline": pipeline_json,
        "shots": list(shots),
        "seeds": list(seeds),
        "base_seed": base_seed,
        "train": train_pool.manifest.source,
        "train_kwargs": train_kwargs,
    }
    return SweepResult(records, selected, summary, timings, config_hash(sweep_echo))
