import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from frofa import core
from frofa.augmentations import KINDS, AugmentationSpec
from frofa.errors import ValidationError
from frofa.rng import make_key


def test_grid_is_pure_reshape(rng):
    tokens = rng.normal(size=(16, 3))
    grid = core.to_grid(tokens)
    for n1 in range(4):
        for n2 in range(4):
            np.testing.assert_array_equal(grid[n1, n2], tokens[n1 * 4 + n2])
    np.testing.assert_array_equal(core.to_tokens(grid), tokens)
    with pytest.raises(ValidationError):
        core.to_grid(rng.normal(size=(5, 3)))


def test_feature_to_image_hand_example():
    grid = np.array([[-2.0, 0.0], [2.0, 4.0]])[..., None]
    mapped = core.feature_to_image(grid)
    np.testing.assert_allclose(mapped.grid[..., 0], [[0, 1 / 3], [2 / 3, 1]])


def test_constant_tensor_maps_to_zero_and_back():
    grid = np.full((2, 2, 3), 7.5)
    mapped = core.feature_to_image(grid)
    assert np.all(mapped.grid == 0)
    assert mapped.stats.f_min == 7.5 and mapped.stats.f_max == 7.5
    np.testing.assert_array_equal(core.image_to_feature(mapped), grid)


def test_per_channel_scope_spans_unit_interval():
    grid = np.stack([np.linspace(0, 1, 4), np.linspace(0, 10, 4)], axis=-1).reshape(2, 2, 2)
    mapped = core.feature_to_image(grid, "per_channel")
    for c in range(2):
        assert mapped.grid[..., c].min() == 0 and mapped.grid[..., c].max() == 1


def test_zero_grid_inverts_to_f_min():
    stats = core.NormStats(np.asarray(-3.0), np.asarray(5.0), "global")
    out = core.image_to_feature(core.MappedFeature(np.zeros((2, 2, 1)), stats))
    assert np.all(out == -3.0)


@settings(max_examples=60, deadline=None)
@given(
    arrays(np.float64, (9, 3), elements=st.floats(-1e3, 1e3)),
    st.sampled_from(["global", "per_channel"]),
)
def test_round_trip_property(tokens, scope):
    grid = core.to_grid(tokens)
    back = core.image_to_feature(core.feature_to_image(grid, scope))
    span = max(grid.max() - grid.min(), 1e-12)
    assert np.max(np.abs(back - grid)) <= 1e-9 * span + 1e-12


def test_identity_augmentation_round_trip(rng):
    tokens = rng.normal(size=(16, 4)).astype(np.float32)
    spec = AugmentationSpec("brightness", 0.5)
    out = core.apply_frofa(tokens, spec, make_key("t", 0), z=0.0)
    span = tokens.max() - tokens.min()
    assert np.max(np.abs(out - tokens)) <= 1e-5 * span


_MAPPED = [
    AugmentationSpec("brightness", 0.8),
    AugmentationSpec("brightness", 0.8, variant="channel2"),
    AugmentationSpec("contrast", 3.0, variant="channel"),
    AugmentationSpec("posterize", 2, 6),
    AugmentationSpec("equalize", 1.0),
    AugmentationSpec("sharpness", 3.0),
    AugmentationSpec("uniform_noise", 0.7),
    AugmentationSpec("rotate", 45.0),
    AugmentationSpec("jpeg", 5, 30),
]


@pytest.mark.parametrize("spec", _MAPPED, ids=lambda s: f"{s.kind}-{s.variant}")
def test_mapped_output_stays_in_range(spec, rng):
    tokens = rng.normal(size=(16, 5)) * 3
    out = core.apply_frofa(tokens, spec, make_key("range", 1))
    if spec.variant == "channel2":
        lo, hi = tokens.min(axis=0), tokens.max(axis=0)
    else:
        lo, hi = tokens.min(), tokens.max()
    assert out.shape == tokens.shape
    assert np.all(out >= lo - 1e-9) and np.all(out <= hi + 1e-9)


def test_deterministic_under_key(rng):
    tokens = rng.normal(size=(16, 4))
    for spec in _MAPPED:
        a = core.apply_frofa(tokens, spec, make_key("d", 3))
        b = core.apply_frofa(tokens, spec, make_key("d", 3))
        assert a.tobytes() == b.tobytes()


def test_variant_collapse_single_channel(rng):
    tokens = rng.normal(size=(16, 1))
    for kind, v, v2 in [("brightness", 0.9, None), ("contrast", 4.0, None), ("posterize", 1, 8),
                        ("rotate", 30.0, None), ("sharpness", 2.0, None)]:
        a = core.apply_frofa(tokens, AugmentationSpec(kind, v, v2), make_key("c", 0))
        b = core.apply_frofa(tokens, AugmentationSpec(kind, v, v2, variant="channel"), make_key("c", 0))
        assert a.tobytes() == b.tobytes(), kind


def test_channel2_equals_channel_under_uniform_ranges(rng):
    tokens = rng.uniform(-1, 2, size=(16, 3))
    tokens[0, :], tokens[1, :] = -1.0, 2.0
    for kind, v, v2 in [("brightness", 1.0, None), ("contrast", 5.0, None), ("posterize", 1, 8)]:
        a = core.apply_frofa(tokens, AugmentationSpec(kind, v, v2, variant="channel"), make_key("u", 2))
        b = core.apply_frofa(tokens, AugmentationSpec(kind, v, v2, variant="channel2"), make_key("u", 2))
        assert a.tobytes() == b.tobytes(), kind


def test_channel_variant_samples_per_channel():
    tokens = np.tile(np.linspace(0, 1, 16)[:, None], (1, 2))
    out = core.apply_frofa(tokens, AugmentationSpec("brightness", 0.5, variant="channel"), make_key("p", 0),
                           z=np.array([0.1, -0.1]))
    assert np.all(out[:, 0] >= tokens[:, 0]) and np.all(out[:, 1] <= tokens[:, 1])


def test_every_kind_runs_except_mixup(rng):
    tokens = rng.normal(size=(16, 3))
    examples = {
        "crop": 2, "resized_crop": 16, "patch_dropout": 5, "posterize": (1, 8), "jpeg": (10, 90),
        "contrast": 2.0, "rotate": 10.0, "translate_x": 1, "translate_y": 1,
    }
    for kind in KINDS:
        v = examples.get(kind, 0.5)
        spec = AugmentationSpec(kind, *v) if isinstance(v, tuple) else AugmentationSpec(kind, v)
        if kind == "mixup":
            with pytest.raises(ValidationError):
                core.apply_frofa(tokens, spec, make_key("k"))
            continue
        out = core.apply_frofa(tokens, spec, make_key("k", kind))
        assert np.all(np.isfinite(out))
        expected_n = {"crop": 4, "patch_dropout": 5}.get(kind, 16)
        assert out.shape == (expected_n, 3), kind


def test_spatial_op_rejects_non_square(rng):
    with pytest.raises(ValidationError, match="perfect square"):
        core.apply_frofa(rng.normal(size=(6, 2)), AugmentationSpec("rotate", 10.0), make_key("s"))
    # non-spatial mapped ops work on any N
    out = core.apply_frofa(rng.normal(size=(6, 2)), AugmentationSpec("brightness", 0.5), make_key("s"))
    assert out.shape == (6, 2)


def test_raw_space_bypasses_mapping():
    tokens = np.array([[1.0, -2.0], [3.0, 0.5]])
    out = core.apply_frofa(tokens, AugmentationSpec("invert", 1.0), make_key("i"))
    np.testing.assert_array_equal(out, -tokens)
    # solarize uses the raw tensor range: f_min=-2, f_max=3
    out = core.apply_frofa(tokens, AugmentationSpec("solarize", 1.0), make_key("s"))
    np.testing.assert_allclose(out, [[1.0, 0.0], [0.0, 0.5]])
