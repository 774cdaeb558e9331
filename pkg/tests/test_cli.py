import csv
import json

import numpy as np
import pytest

from frofa.cli import format_gain, main, parse_int_list


@pytest.fixture
def demo(tmp_path):
    path = tmp_path / "demo.ffac"
    assert main(["cache", "synth", "--classes", "10", "--per-class", "30", "--n", "16", "--c", "8",
                 "--seed", "0", "-o", str(path)]) == 0
    return path


def test_parse_lists():
    assert parse_int_list("1,5,10,25") == [1, 5, 10, 25]
    assert parse_int_list("0..4") == [0, 1, 2, 3, 4]
    assert parse_int_list("0..1,7") == [0, 1, 7]


def test_cache_info(demo, capsys):
    assert main(["cache", "info", str(demo)]) == 0
    assert "E=300, N=16, C=8, S=10" in capsys.readouterr().out


def test_import_rank_mismatch(tmp_path, capsys):
    np.save(tmp_path / "f.npy", np.zeros((4, 8), np.float32))
    np.save(tmp_path / "l.npy", np.arange(4))
    code = main(["cache", "import", "--features", str(tmp_path / "f.npy"), "--labels",
                 str(tmp_path / "l.npy"), "--layout", "token_grid", "-o", str(tmp_path / "x.ffac")])
    assert code == 2
    assert "rank mismatch" in capsys.readouterr().err


def test_usage_and_missing_inputs(tmp_path):
    assert main(["sweep", "--grid", "huge"]) == 2
    assert main(["train", "--cache", str(tmp_path / "absent.ffac")]) == 2
    bad = tmp_path / "p.json"
    bad.write_text("{not json")
    assert main(["train", "--cache", str(tmp_path / "absent.ffac"), "--pipeline", str(bad)]) == 2


def test_invalid_pipeline_json(demo, tmp_path):
    bad = tmp_path / "p.json"
    bad.write_text("{not json")
    assert main(["train", "--cache", str(demo), "--pipeline", str(bad), "--out", str(tmp_path)]) == 2
    bad.write_text(json.dumps({"kind": "posterize", "v": 0, "v2": 4}))
    assert main(["train", "--cache", str(demo), "--pipeline", str(bad), "--out", str(tmp_path)]) == 2


def _train(demo, out, *extra):
    return main(["train", "--cache", str(demo), "--shots", "1", "--seeds", "0..1", "--steps", "600",
                 "--out", str(out), *extra])


def test_train_twice_identical(demo, tmp_path, capsys):
    assert _train(demo, tmp_path / "a", "--pipeline", "none") == 0
    assert _train(demo, tmp_path / "b", "--pipeline", "none") == 0
    out = capsys.readouterr().out
    assert "shot=1 mean_top1=" in out and "±" in out
    for name in ("metrics.jsonl", "summary.csv", "summary.json"):
        assert (tmp_path / "a" / "train-none" / name).read_bytes() == (tmp_path / "b" / "train-none" / name).read_bytes()
    with open(tmp_path / "a" / "train-none" / "summary.csv") as fh:
        header = next(csv.reader(fh))
    assert header == ["shot", "seed", "batch_size", "lr", "steps", "weight_decay", "pipeline_id",
                      "val_top1", "test_top1", "best_step"]
    ckpts = list((tmp_path / "a" / "train-none" / "checkpoints").glob("*.bin"))
    assert len(ckpts) == 2
    assert main(["eval", "--checkpoint", str(ckpts[0]), "--cache", str(demo)]) == 0
    assert "top1=" in capsys.readouterr().out


def test_manifest_and_env(demo, tmp_path, monkeypatch):
    manifest = tmp_path / "m.json"
    manifest.write_text(json.dumps({"cache": demo.name, "shots": [1], "seeds": [0], "steps": 600, "name": "m"}))
    monkeypatch.setenv("FROFA_OUT", str(tmp_path / "env"))
    # cache path is resolved relative to the manifest
    monkeypatch.chdir("/")
    assert main(["train", "--manifest", str(manifest)]) == 0
    assert (tmp_path / "env" / "m" / "summary.json").exists()


def test_probe_interpolates(tmp_path, capsys):
    path = tmp_path / "toy.ffac"
    assert main(["cache", "synth", "--classes", "3", "--per-class", "10", "--n", "1", "--c", "5",
                 "--seed", "2", "-o", str(path)]) == 0
    # 3 classes x 2 shots = 6 rows against 5 weights + intercept: a square system
    assert main(["probe", "--cache", str(path), "--shots", "2", "--seeds", "0", "--lam", "0",
                 "--out", str(tmp_path)]) == 0
    assert "shot=2 train_top1=1.000" in capsys.readouterr().out


def _fake_run(root, name, means):
    d = root / name
    d.mkdir(parents=True)
    shots = {str(k): {"mean": m, "stderr": 0.0, "n": 5} for k, m in means.items()}
    (d / "summary.json").write_text(json.dumps({"run": name, "pipeline_id": name, "shots": shots}))


def test_report_gains(tmp_path, capsys):
    _fake_run(tmp_path, "base", {1: 0.580, 5: 0.7, 10: 0.8, 25: 0.9})
    _fake_run(tmp_path, "bright", {1: 0.641, 5: 0.7, 10: 0.81, 25: 0.88})
    _fake_run(tmp_path, "contrast", {1: 0.6, 5: 0.71, 10: 0.8, 25: 0.9})
    _fake_run(tmp_path, "poster", {1: 0.5, 5: 0.72, 10: 0.79, 25: 0.91})
    assert main(["report", str(tmp_path), "--baseline", "base"]) == 0
    with open(tmp_path / "gains.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 12
    row = next(r for r in rows if r["run"] == "bright" and r["shot"] == "1")
    assert row["gain"] == "+0.061"
    assert next(r for r in rows if r["run"] == "bright" and r["shot"] == "5")["gain"] == "0.000"
    for k in (1, 5, 10, 25):
        assert (tmp_path / f"gains_shot{k}.svg").read_text().lstrip().startswith("<?xml")
    assert main(["report", str(tmp_path), "--baseline", "missing"]) == 2


def test_format_gain():
    assert format_gain(0.641 - 0.580) == "+0.061"
    assert format_gain(0.0) == "0.000"
    assert format_gain(-0.0004) == "0.000"
    assert format_gain(-0.02) == "-0.020"
