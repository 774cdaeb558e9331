import numpy as np
import pytest

from frofa import protocols as pr
from frofa.augmentations import AugmentationSpec
from frofa.core import apply_frofa
from frofa.errors import ValidationError
from frofa.rng import fold_in, make_key


def test_default_pool_settings():
    b, c, p = pr.POOLS["top3"]
    assert (b.kind, b.v, b.variant) == ("brightness", 1.0, "channel2")
    assert (c.kind, c.v, c.variant) == ("contrast", 5.0, "default")
    assert (p.kind, p.v, p.v2, p.variant) == ("posterize", 1, 8, "channel")
    assert pr.POOLS["top2"] == (b, p)


def test_pipeline_validation():
    with pytest.raises(ValidationError):
        pr.Pipeline("sequential", (pr.CONTRAST,))
    with pytest.raises(ValidationError):
        pr.Pipeline("rand_augment_star")
    with pytest.raises(ValidationError):
        pr.Pipeline("trivial_augment_star", pool="top4")
    with pytest.raises(ValidationError):
        pr.Pipeline("trivial_augment_star", (AugmentationSpec("mixup", 0.5),))
    with pytest.raises(ValidationError):
        pr.Pipeline("zigzag", (pr.CONTRAST,))


def test_json_round_trip():
    p = pr.Pipeline("sequential", (pr.BRIGHTNESS_C2, pr.POSTERIZE_C))
    assert pr.Pipeline.from_json(p.to_json()) == p
    q = pr.Pipeline("rand_augment_star", pool="top3")
    assert q.to_json() == {"mode": "rand_augment_star", "ops": [], "pool": "top3"}
    assert pr.Pipeline.from_json(q.to_json()).pipeline_id == q.pipeline_id != p.pipeline_id


def test_sequential_identity_is_noop(rng):
    ident = AugmentationSpec("brightness", 0.0)
    p = pr.Pipeline("sequential", (ident, ident))
    x = rng.normal(size=(16, 4))
    assert pr.apply_pipeline(p, x, make_key("s")) is x


def test_sequential_order(rng):
    x = rng.normal(size=(16, 3))
    p = pr.Pipeline("sequential", (pr.BRIGHTNESS_C2, pr.POSTERIZE_C))
    key = make_key("order", 7)
    out = pr.apply_pipeline(p, x, key)
    manual = apply_frofa(apply_frofa(x, pr.BRIGHTNESS_C2, fold_in(key, 0)), pr.POSTERIZE_C, fold_in(key, 1))
    np.testing.assert_array_equal(out, manual)
    swapped = apply_frofa(apply_frofa(x, pr.POSTERIZE_C, fold_in(key, 1)), pr.BRIGHTNESS_C2, fold_in(key, 0))
    assert not np.allclose(out, swapped)


def test_trivial_augment_degenerate_pool():
    p = pr.Pipeline("trivial_augment_star", (pr.CONTRAST,))
    for i in range(20):
        assert pr.draw_ops(p, make_key("ta", i)) == (pr.CONTRAST,)


def test_rand_augment_lengths_and_distinct_ops():
    p = pr.Pipeline("rand_augment_star", pool="top3")
    lengths = []
    for i in range(2000):
        ops = pr.draw_ops(p, make_key("ra", i))
        assert 1 <= len(ops) <= 3 and len(set(ops)) == len(ops)
        lengths.append(len(ops))
    counts = np.bincount(lengths, minlength=4)[1:]
    assert np.all(counts > 500)


def test_trivial_augment_uniform():
    p = pr.Pipeline("trivial_augment_star", pool="top3")
    picks = [pr.draw_ops(p, make_key("t", i))[0].kind for i in range(3000)]
    for kind in ("brightness", "contrast", "posterize"):
        assert 850 < picks.count(kind) < 1150


def test_augment_batch_deterministic_and_per_example(rng):
    x = np.repeat(rng.normal(size=(1, 16, 4)), 3, axis=0).astype(np.float32)
    y = np.eye(3, dtype=np.float32)
    p = pr.single(pr.BRIGHTNESS_C2)
    a, _ = pr.augment_batch(p, x, y, make_key("b", 1))
    b, _ = pr.augment_batch(p, x, y, make_key("b", 1))
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a[0], a[1])


def test_augment_batch_mixup(rng):
    x = rng.normal(size=(4, 16, 2)).astype(np.float32)
    y = np.eye(4, dtype=np.float32)
    p = pr.single(AugmentationSpec("mixup", 0.4))
    xm, ym = pr.augment_batch(p, x, y, make_key("m"))
    assert xm.shape == x.shape
    np.testing.assert_allclose(ym.sum(axis=1), 1.0, rtol=1e-6)
