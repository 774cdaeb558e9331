"""Command line entry point: ``frofa {cache,train,sweep,probe,eval,report}``.

Exit codes are 0 on success, 1 on a runtime failure and 2 on a usage or
validation error. Every experiment command reads its settings from an optional
JSON manifest, with command line flags taking precedence.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import feature_store as fs
from . import linear_probe as lp
from . import map_head
from .augmentations import AugmentationSpec
from .checkpoint import load_tensors
from .errors import CacheFormatError, FrofaError, ValidationError
from .protocols import Pipeline, single
from .trainer import (
    SweepGrid,
    config_hash,
    evaluate_top1,
    replica_seed,
    run_sweep,
    standard_error,
)

SUMMARY_COLUMNS = (
    "shot", "seed", "batch_size", "lr", "steps", "weight_decay",
    "pipeline_id", "val_top1", "test_top1", "best_step",
)
DEFAULTS = {
    "shots": [1, 5, 10, 25],
    "seeds": [0, 1, 2, 3, 4],
    "pipeline": None,
    "grid": "full",
    "weight_decay_axis": False,
    "workers": 1,
    "seed": 0,
    "batch_size": 32,
    "lr": 0.03,
    "steps": 2000,
    "weight_decay": 0.0,
}


# ---------------------------------------------------------------- parsing helpers


def parse_int_list(text: str, positive: bool = False) -> list:
    """``"1,5,10"`` or ``"0..4"`` (inclusive) or a mix of both."""
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        try:
            if ".." in part:
                lo, hi = part.split("..")
                lo, hi = int(lo), int(hi)
                if hi < lo:
                    raise ValidationError(f"empty range {part!r}")
                out.extend(range(lo, hi + 1))
            else:
                out.append(int(part))
        except ValueError as exc:
            raise ValidationError(f"cannot parse {part!r} as an integer list") from exc
    if not out:
        raise ValidationError(f"empty list {text!r}")
    if positive and min(out) < 1:
        raise ValidationError(f"values must be positive: {text!r}")
    return out


def _on_off(text) -> bool:
    if isinstance(text, bool):
        return text
    if text not in ("on", "off"):
        raise ValidationError(f"expected on|off, got {text!r}")
    return text == "on"


def load_pipeline(value, base_dir: Path | None = None):
    """``None``/``"none"`` -> no pipeline; a dict or a JSON file holding either
    a pipeline or a single augmentation spec."""
    if value is None or value == "none":
        return None
    if isinstance(value, dict):
        obj = value
    else:
        path = Path(value)
        if base_dir is not None and not path.is_absolute() and not path.exists():
            path = base_dir / path
        if not path.exists():
            raise ValidationError(f"pipeline file not found: {value}")
        try:
            obj = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"invalid pipeline JSON in {path}: {exc}") from exc
    if isinstance(obj, dict) and "kind" in obj:
        return single(AugmentationSpec.from_json(obj))
    return Pipeline.from_json(obj)


def _load_manifest(path):
    if path is None:
        return {}, None
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"manifest not found: {path}")
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"invalid manifest JSON in {path}: {exc}") from exc
    if not isinstance(obj, dict):
        raise ValidationError("manifest must be a JSON object")
    return obj, path.parent


def _resolve(args, manifest: dict, key: str):
    value = getattr(args, key, None)
    if value is not None:
        return value
    if key in manifest:
        return manifest[key]
    return DEFAULTS.get(key)


def _path_setting(args, manifest, base_dir, key):
    value = getattr(args, key, None)
    if value is not None:
        return Path(value)
    if manifest.get(key) is None:
        return None
    p = Path(manifest[key])
    return p if p.is_absolute() or base_dir is None else base_dir / p


def _read(path: Path) -> fs.FeatureCache:
    if not Path(path).exists():
        raise ValidationError(f"missing cache: {path}")
    return fs.read_cache(path)


class Experiment:
    """Settings shared by train, sweep and probe after merging flags and manifest."""

    def __init__(self, args, command: str):
        manifest, base_dir = _load_manifest(args.manifest)
        self.command = command
        cache = _path_setting(args, manifest, base_dir, "cache")
        val = _path_setting(args, manifest, base_dir, "val_cache")
        test = _path_setting(args, manifest, base_dir, "test_cache")
        self.seed = int(_resolve(args, manifest, "seed"))
        if cache is None:
            raise ValidationError("no training cache given (--cache or manifest 'cache')")
        pool = _read(cache)
        if val is None and test is None:
            self.train, self.val, self.test = fs.split_cache(pool, seed=self.seed)
        elif val is None or test is None:
            raise ValidationError("give both --val-cache and --test-cache, or neither")
        else:
            self.train, self.val, self.test = pool, _read(val), _read(test)
        for other in (self.val, self.test):
            if other.manifest.C != self.train.manifest.C or other.manifest.N != self.train.manifest.N:
                raise ValidationError("train, validation and test caches differ in N or C")

        shots = _resolve(args, manifest, "shots")
        seeds = _resolve(args, manifest, "seeds")
        self.shots = parse_int_list(shots, positive=True) if isinstance(shots, str) else list(shots)
        self.seeds = parse_int_list(seeds) if isinstance(seeds, str) else list(seeds)
        pipe = getattr(args, "pipeline", None)
        self.pipeline = load_pipeline(pipe if pipe is not None else manifest.get("pipeline"), base_dir)
        self.workers = int(_resolve(args, manifest, "workers"))
        if self.workers < 1:
            raise ValidationError("--workers must be at least 1")
        self.manifest = manifest
        self.args = args
        pid = self.pipeline.pipeline_id if self.pipeline else "none"
        self.name = _resolve(args, manifest, "name") or f"{command}-{pid}"
        out = getattr(args, "out", None) or manifest.get("out") or os.environ.get("FROFA_OUT")
        if out is None:
            out = "frofa_out"
        out = Path(out)
        if base_dir is not None and args.out is None and "out" in manifest and not out.is_absolute():
            out = base_dir / out
        self.out = out / self.name
        self.out.mkdir(parents=True, exist_ok=True)

    def setting(self, key):
        return _resolve(self.args, self.manifest, key)


# ---------------------------------------------------------------- writers


def _write_jsonl(path: Path, rows) -> None:
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def _write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([row[c] for c in columns])


def _write_summary(exp: Experiment, summary: dict, chash: str, extra=None) -> None:
    obj = {
        "run": exp.name,
        "command": exp.command,
        "config_hash": chash,
        "pipeline_id": exp.pipeline.pipeline_id if exp.pipeline else "none",
        "pipeline": exp.pipeline.to_json() if exp.pipeline else None,
        "shots": {str(k): v for k, v in summary.items()},
    }
    obj.update(extra or {})
    with open(exp.out / "summary.json", "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _print_summary(summary: dict, chash: str) -> None:
    for shot, s in summary.items():
        print(f"shot={shot} mean_top1={s['mean']:.3f} ± {s['stderr']:.3f}")
    print(f"config_hash={chash}")


# ---------------------------------------------------------------- commands


def cmd_cache(args) -> int:
    if args.cache_cmd == "synth":
        cache = fs.generate_synthetic(
            args.classes, args.per_class, args.n, args.c,
            args.cluster_scale, args.noise_scale, args.seed, args.split,
        )
        fs.save_cache(cache, args.output)
        print(f"wrote {args.output}: E={len(cache)} N={args.n} C={args.c} S={args.classes}")
    elif args.cache_cmd == "import":
        cache = fs.import_npy(args.features, args.labels, args.layout, args.split, args.source or "")
        fs.save_cache(cache, args.output)
        m = cache.manifest
        print(f"wrote {args.output}: E={m.num_examples} N={m.N} C={m.C} S={m.num_classes}")
    else:
        m = _read(Path(args.path)).manifest
        print(f"E={m.num_examples}, N={m.N}, C={m.C}, S={m.num_classes}")
        print(f"layout={m.layout} split={m.split_name} version={m.version} source={m.source}")
    return 0


def _grid_for(exp: Experiment, command: str) -> SweepGrid:
    if command == "train":
        wd = float(exp.setting("weight_decay"))
        return SweepGrid(
            (int(exp.setting("batch_size")),),
            (float(exp.setting("lr")),),
            (int(exp.setting("steps")),),
            (wd,),
        )
    grid = exp.setting("grid")
    if grid == "reduced":
        return SweepGrid.reduced()
    if grid == "full":
        return SweepGrid.full(_on_off(exp.setting("weight_decay_axis")))
    raise ValidationError(f"unknown grid {grid!r}; expected full or reduced")


def cmd_sweep(args, command: str = "sweep") -> int:
    exp = Experiment(args, command)
    grid = _grid_for(exp, command)
    ckpt = None
    if command == "train":
        ckpt = exp.out / "checkpoints"
        ckpt.mkdir(exist_ok=True)
    extra = {}
    if getattr(args, "eval_every", None):
        extra["eval_every"] = args.eval_every
    result = run_sweep(
        grid, exp.pipeline, exp.train, exp.val, exp.test,
        shots=exp.shots, seeds=exp.seeds, workers=exp.workers,
        base_seed=exp.seed, checkpoint_dir=ckpt, **extra,
    )
    _write_jsonl(exp.out / "metrics.jsonl", result.records)
    _write_csv(exp.out / "summary.csv", SUMMARY_COLUMNS, result.selected)
    _write_csv(exp.out / "timings.csv", ("shot", "seed", "config_hash", "wall_s"), result.timings)
    _write_summary(exp, result.summary, result.config_hash, {"configs_per_replica": len(grid)})
    print(f"{len(grid)} configs per replica, {len(result.records)} runs -> {exp.out}")
    _print_summary(result.summary, result.config_hash)
    return 0


def cmd_probe(args) -> int:
    exp = Experiment(args, "probe")
    if exp.pipeline is not None:
        raise ValidationError("the linear probe does not use augmentation; pass --pipeline none")
    S = exp.train.num_classes
    X_val, y_val = exp.val.pooled(), exp.val.labels
    X_test, y_test = exp.test.pooled(), exp.test.labels
    ckpt = exp.out / "checkpoints"
    ckpt.mkdir(exist_ok=True)
    records, summary = [], {}
    for shot in exp.shots:
        tests = []
        for seed in exp.seeds:
            sample = fs.sample_few_shot(exp.train, shot, replica_seed(exp.seed, seed))
            part = exp.train.subset(sample.indices)
            X, Y = part.pooled(), lp.one_hot(part.labels, S)
            if args.lam is not None:
                sol = lp.fit_ridge(X, Y, args.lam)
                sol.val_top1 = lp.top1(sol, X_val, y_val)
            else:
                sol = lp.sweep_lambda(X, Y, X_val, y_val)
            rec = {
                "shot": shot,
                "seed": seed,
                "lambda": sol.lam,
                "train_top1": lp.top1(sol, X, part.labels),
                "val_top1": sol.val_top1,
                "test_top1": lp.top1(sol, X_test, y_test),
            }
            lp.save_solution(sol, ckpt / f"shot{shot}_seed{seed}.bin")
            records.append(rec)
            tests.append(rec["test_top1"])
        summary[shot] = {"mean": float(np.mean(tests)), "stderr": standard_error(tests), "n": len(tests)}
    chash = config_hash({"probe": True, "lam": args.lam, "shots": exp.shots, "seeds": exp.seeds,
                         "seed": exp.seed, "train": exp.train.manifest.source})
    _write_jsonl(exp.out / "metrics.jsonl", records)
    _write_csv(exp.out / "summary.csv",
               ("shot", "seed", "lambda", "train_top1", "val_top1", "test_top1"), records)
    _write_summary(exp, summary, chash)
    for shot in exp.shots:
        rows = [r for r in records if r["shot"] == shot]
        print(f"shot={shot} train_top1={np.mean([r['train_top1'] for r in rows]):.3f}")
    _print_summary(summary, chash)
    return 0


def cmd_eval(args) -> int:
    _, meta = load_tensors(args.checkpoint)
    if meta.get("kind") == "ridge":
        model = lp.load_solution(args.checkpoint)
    elif meta.get("kind") == "map_head":
        model = map_head.load_params(args.checkpoint)
    else:
        raise ValidationError(f"{args.checkpoint}: unknown checkpoint kind {meta.get('kind')!r}")
    cache = _read(Path(args.cache))
    print(f"top1={evaluate_top1(model, cache):.4f} n={len(cache)}")
    return 0


def format_gain(gain: float) -> str:
    text = f"{round(gain, 3):+.3f}"
    return "0.000" if text in ("+0.000", "-0.000") else text


def cmd_report(args) -> int:
    root = Path(args.metrics_dir)
    runs = {}
    for path in sorted(root.glob("*/summary.json")):
        obj = json.loads(path.read_text())
        runs[obj.get("run", path.parent.name)] = obj
    if args.baseline not in runs:
        raise ValidationError(
            f"missing baseline id {args.baseline!r}; runs found: {sorted(runs) or 'none'}"
        )
    base = runs[args.baseline]["shots"]
    rows = []
    for shot in sorted(base, key=int):
        for name, obj in runs.items():
            if name == args.baseline or shot not in obj["shots"]:
                continue
            b, t = base[shot]["mean"], obj["shots"][shot]["mean"]
            rows.append({
                "shot": int(shot),
                "run": name,
                "pipeline_id": obj.get("pipeline_id", ""),
                "baseline_top1": f"{b:.3f}",
                "top1": f"{t:.3f}",
                "gain": format_gain(t - b),
            })
    out = Path(args.output) if args.output else root
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "gains.csv", ("shot", "run", "pipeline_id", "baseline_top1", "top1", "gain"), rows)
    for shot in sorted({r["shot"] for r in rows}):
        _gain_chart([r for r in rows if r["shot"] == shot], shot, out / f"gains_shot{shot}.svg")
    print(f"{len(rows)} gain rows -> {out / 'gains.csv'}")
    return 0


def _gain_chart(rows, shot: int, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "frofa"
    gains = [float(r["gain"]) for r in rows]
    fig, ax = plt.subplots(figsize=(max(3.0, 0.9 * len(rows) + 1.5), 3.0))
    ax.bar(range(len(rows)), gains, color=["tab:green" if g >= 0 else "tab:red" for g in gains])
    ax.axhline(0.0, color="black", lw=0.8)
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels([r["run"] for r in rows], rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("top-1 gain vs baseline")
    ax.set_title(f"{shot}-shot")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


# ---------------------------------------------------------------- argument parser


def _experiment_flags(p, sweep: bool = False) -> None:
    p.add_argument("--manifest", help="JSON file with experiment settings")
    p.add_argument("--cache", help="training cache (split 60/20/20 when no val/test caches are given)")
    p.add_argument("--val-cache", dest="val_cache")
    p.add_argument("--test-cache", dest="test_cache")
    p.add_argument("--shots", help="e.g. 1,5,10,25")
    p.add_argument("--seeds", help="e.g. 0..4")
    p.add_argument("--pipeline", help="pipeline JSON file, or 'none'")
    p.add_argument("--out", help="output root (default $FROFA_OUT, else ./frofa_out)")
    p.add_argument("--name", help="run name, used as the output subdirectory")
    p.add_argument("--seed", type=int, help="base seed for every random choice")
    p.add_argument("--workers", type=int)
    p.add_argument("--eval-every", dest="eval_every", type=int)
    if sweep:
        p.add_argument("--grid", choices=("full", "reduced"))
        p.add_argument("--weight-decay-axis", dest="weight_decay_axis", choices=("on", "off"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="frofa", description="Frozen feature augmentation experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    cache = sub.add_parser("cache", help="create or inspect feature caches")
    csub = cache.add_subparsers(dest="cache_cmd", required=True)
    synth = csub.add_parser("synth", help="class-conditional Gaussian cache")
    synth.add_argument("--classes", type=int, required=True)
    synth.add_argument("--per-class", dest="per_class", type=int, required=True)
    synth.add_argument("--n", type=int, required=True)
    synth.add_argument("--c", type=int, required=True)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--cluster-scale", dest="cluster_scale", type=float, default=1.0)
    synth.add_argument("--noise-scale", dest="noise_scale", type=float, default=1.0)
    synth.add_argument("--split", default="train")
    synth.add_argument("-o", "--output", required=True)
    imp = csub.add_parser("import", help="cache from .npy features and labels")
    imp.add_argument("--features", required=True)
    imp.add_argument("--labels", required=True)
    imp.add_argument("--layout", choices=fs.LAYOUTS, default="token_grid")
    imp.add_argument("--split", default="train")
    imp.add_argument("--source")
    imp.add_argument("-o", "--output", default="features.ffac")
    info = csub.add_parser("info", help="print the cache manifest")
    info.add_argument("path")

    train = sub.add_parser("train", help="train the MAP head with one configuration")
    _experiment_flags(train)
    train.add_argument("--batch-size", dest="batch_size", type=int)
    train.add_argument("--lr", type=float)
    train.add_argument("--steps", type=int)
    train.add_argument("--weight-decay", dest="weight_decay", type=float)

    sweep = sub.add_parser("sweep", help="hyperparameter sweep with per-replica selection")
    _experiment_flags(sweep, sweep=True)

    probe = sub.add_parser("probe", help="closed-form linear probe on pooled features")
    _experiment_flags(probe)
    probe.add_argument("--lam", type=float, help="fixed lambda instead of the 2^-20..2^10 sweep")

    ev = sub.add_parser("eval", help="top-1 of a saved head or probe on a cache")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--cache", required=True)

    report = sub.add_parser("report", help="gains over a baseline run, as CSV and SVG")
    report.add_argument("metrics_dir")
    report.add_argument("--baseline", required=True, help="run name of the baseline")
    report.add_argument("-o", "--output", help="output directory (default: metrics_dir)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    handlers = {
        "cache": cmd_cache,
        "train": lambda a: cmd_sweep(a, "train"),
        "sweep": cmd_sweep,
        "probe": cmd_probe,
        "eval": cmd_eval,
        "report": cmd_report,
    }
    try:
        return handlers[args.command](args)
    except (ValidationError, CacheFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FrofaError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
