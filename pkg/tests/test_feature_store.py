import json
import struct

import numpy as np
import pytest

from frofa import feature_store as fs
from frofa.errors import CacheFormatError, ValidationError
from frofa.linear_probe import fit_ridge, one_hot, top1


def _manifest(E=2, N=4, C=2, S=2, layout="token_grid"):
    return fs.CacheManifest(fs.FORMAT_VERSION, layout, N, C, E, S)


def test_write_layout_matches_format(tmp_path):
    labels = np.array([0, 1])
    feats = np.arange(16, dtype=np.float32).reshape(2, 4, 2)
    path = tmp_path / "a.ffac"
    fs.write_cache(_manifest(), labels, feats, path)
    blob = path.read_bytes()
    # header + two u32 labels + sixteen f32 values, built independently with struct
    expected = struct.pack("<4sIB3xIIIQ", b"FFAC", 1, 0, 4, 2, 2, 2)
    expected += struct.pack("<2I", 0, 1) + struct.pack("<16f", *range(16))
    assert blob == expected
    side = json.loads((tmp_path / "a.json").read_text())
    assert side["N"] == 4 and side["split_name"] == "train"


def test_round_trip_bit_exact(tmp_path, rng):
    feats = rng.normal(size=(5, 9, 3)).astype(np.float32)
    labels = np.array([0, 1, 2, 1, 0])
    path = tmp_path / "r.ffac"
    fs.write_cache(_manifest(5, 9, 3, 3), labels, feats, path)
    back = fs.read_cache(path)
    assert back.manifest == _manifest(5, 9, 3, 3)
    np.testing.assert_array_equal(back.labels, labels)
    assert back.features.tobytes() == feats.tobytes()


def test_pooled_layout_accepted(tmp_path):
    feats = np.ones((2, 1, 8), np.float32)
    fs.write_cache(_manifest(2, 1, 8, 2, "pooled"), [0, 1], feats, tmp_path / "p.ffac")
    assert fs.read_cache(tmp_path / "p.ffac").manifest.layout == "pooled"


def test_label_out_of_range(tmp_path):
    with pytest.raises(ValidationError, match="label out of range"):
        fs.write_cache(_manifest(), [0, 2], np.zeros((2, 4, 2), np.float32), tmp_path / "x.ffac")


def test_shape_mismatch(tmp_path):
    with pytest.raises(ValidationError, match="shape mismatch"):
        fs.write_cache(_manifest(), [0, 1], np.zeros((2, 4, 3), np.float32), tmp_path / "x.ffac")


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.ffac"
    fs.write_cache(_manifest(), [0, 1], np.zeros((2, 4, 2), np.float32), path)
    blob = bytearray(path.read_bytes())
    blob[:4] = b"NOPE"
    path.write_bytes(bytes(blob))
    with pytest.raises(CacheFormatError, match="not a feature cache"):
        fs.read_cache(path)


def test_truncated_payload(tmp_path):
    path = tmp_path / "t.ffac"
    fs.write_cache(_manifest(), [0, 1], np.zeros((2, 4, 2), np.float32), path)
    path.write_bytes(path.read_bytes()[:-5])
    with pytest.raises(CacheFormatError, match="truncated payload"):
        fs.read_cache(path)


def test_truncated_header(tmp_path):
    path = tmp_path / "h.ffac"
    path.write_bytes(b"FFAC\x01\x00")
    with pytest.raises(CacheFormatError, match="truncated header"):
        fs.read_cache(path)


def test_import_shapes_and_labels(tmp_path):
    f, l = tmp_path / "f.npy", tmp_path / "l.npy"
    np.save(f, np.arange(24, dtype=np.float32).reshape(3, 4, 2))
    np.save(l, np.array([0, 0, 2], dtype=np.int64))
    cache = fs.import_npy(f, l)
    m = cache.manifest
    assert (m.num_examples, m.N, m.C, m.num_classes) == (3, 4, 2, 3)
    np.testing.assert_array_equal(cache.features.ravel(), np.arange(24))


def test_import_rank_mismatch(tmp_path):
    f, l = tmp_path / "f.npy", tmp_path / "l.npy"
    np.save(f, np.zeros((3, 2), np.float32))
    np.save(l, np.array([0, 1, 1], dtype=np.int32))
    with pytest.raises(ValidationError, match="rank mismatch"):
        fs.import_npy(f, l, layout="token_grid")


def test_import_errors(tmp_path):
    f, l = tmp_path / "f.npy", tmp_path / "l.npy"
    np.save(f, np.zeros((3, 4, 2), np.float64))
    np.save(l, np.array([0, 1, 1], dtype=np.int32))
    with pytest.raises(ValidationError, match="unsupported dtype"):
        fs.import_npy(f, l)
    np.save(f, np.zeros((3, 4, 2), np.float32))
    np.save(l, np.array([0, 1], dtype=np.int32))
    with pytest.raises(ValidationError, match="E mismatch"):
        fs.import_npy(f, l)


def test_import_export_bit_exact(tmp_path, rng):
    feats = rng.normal(size=(4, 1, 6)).astype(np.float32)
    feats[0, 0, 0] = np.float32(np.nextafter(np.float32(1), np.float32(2)))
    f, l = tmp_path / "f.npy", tmp_path / "l.npy"
    np.save(f, feats[:, 0, :])
    np.save(l, np.array([0, 1, 0, 1]))
    cache = fs.import_npy(f, l, layout="pooled")
    fs.export_npy(cache, tmp_path / "f2.npy", tmp_path / "l2.npy")
    assert np.load(tmp_path / "f2.npy").tobytes() == feats[:, 0, :].tobytes()


def test_synthetic_properties():
    a = fs.generate_synthetic(3, 4, 4, 2, noise_scale=0.0, seed=5)
    for c in range(3):
        block = a.features[a.labels == c]
        assert np.all(block == block[0, 0])
    b = fs.generate_synthetic(3, 4, 4, 2, noise_scale=0.0, seed=5)
    assert a.features.tobytes() == b.features.tobytes()


def test_synthetic_separable_by_probe():
    cache = fs.generate_synthetic(10, 30, 16, 8, cluster_scale=5.0, noise_scale=0.5, seed=0)
    assert len(cache) == 300
    X = cache.pooled()
    sol = fit_ridge(X, one_hot(cache.labels, 10), 1e-3)
    assert top1(sol, X, cache.labels) > 0.9


def test_few_shot_sampling(small_cache):
    s = fs.sample_few_shot(small_cache, 1, 0)
    assert len(s.indices) == 4
    assert sorted(small_cache.labels[s.indices]) == [0, 1, 2, 3]
    again = fs.sample_few_shot(small_cache, 1, 0)
    np.testing.assert_array_equal(s.indices, again.indices)
    full = fs.sample_few_shot(small_cache, 6, 3)
    assert sorted(full.indices) == list(range(len(small_cache)))
    draws = {tuple(fs.sample_few_shot(small_cache, 2, seed).indices) for seed in range(5)}
    assert len(draws) > 1
    with pytest.raises(ValidationError):
        fs.sample_few_shot(small_cache, 7, 0)


def test_split_is_partition(small_cache):
    tr, va, te = fs.split_cache(small_cache, seed=1)
    assert len(tr) + len(va) + len(te) == len(small_cache)
    rows = {r.tobytes() for part in (tr, va, te) for r in part.features}
    assert len(rows) == len(small_cache)
