import hashlib
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oldphoto import degrade
from oldphoto.errors import (
    ConfigurationError,
    DegradationOpError,
    InvalidInputError,
    InvalidParameterError,
    InvalidPlacementError,
)
from oldphoto.toy import toy_images


def rand_img(seed=0, c=3, h=16, w=16):
    return np.random.default_rng(seed).random((c, h, w)).astype(np.float32)


def const(v, c=3, h=16, w=16):
    return np.full((c, h, w), v, dtype=np.float32)


# ---------------------------------------------------------------- noise

def test_noise_zero_sigma_is_identity():
    img = rand_img()
    assert np.array_equal(degrade.apply_gaussian_noise(img, 0, seed=3), img)


def test_noise_is_deterministic():
    img = rand_img()
    a = degrade.apply_gaussian_noise(img, 25, seed=7)
    b = degrade.apply_gaussian_noise(img, 25, seed=7)
    assert a.tobytes() == b.tobytes()


def test_noise_std_matches_sigma_over_255():
    img = const(0.5, c=1, h=256, w=256)
    out = degrade.apply_gaussian_noise(img, 25, seed=1)
    # sigma 25/255 ~ 0.098 keeps 0.5 +- 5 sigma inside [0,1]: clamping never fires
    std = float(np.std(out.astype(np.float64) - 0.5))
    assert abs(std - 25 / 255) / (25 / 255) < 0.05


def test_noise_negative_sigma_rejected():
    with pytest.raises(InvalidParameterError):
        degrade.apply_gaussian_noise(rand_img(), -1, seed=0)


# ---------------------------------------------------------------- blur

@pytest.mark.parametrize("k", [3, 5, 7])
def test_gaussian_blur_preserves_constant(k):
    img = const(0.3)
    assert np.array_equal(degrade.apply_gaussian_blur(img, k, 2.0), img)


def test_gaussian_blur_impulse_is_analytic_kernel():
    img = np.zeros((1, 9, 9), dtype=np.float32)
    img[0, 4, 4] = 1.0
    sigma = 1.3
    out = degrade.apply_gaussian_blur(img, 3, sigma)
    # independent evaluation of the normalised separable Gaussian
    g = [math.exp(-(x * x) / (2 * sigma * sigma)) for x in (-1, 0, 1)]
    total = sum(g)
    expected = np.array([[g[i] * g[j] / total ** 2 for j in range(3)] for i in range(3)])
    assert np.allclose(out[0, 3:6, 3:6], expected, atol=1e-7)
    assert abs(float(out.astype(np.float64).sum()) - 1.0) < 1e-6


@pytest.mark.parametrize("k", [2, 4, 9, 1])
def test_gaussian_blur_bad_kernel(k):
    with pytest.raises(InvalidParameterError):
        degrade.apply_gaussian_blur(rand_img(), k, 1.0)


def test_gaussian_blur_bad_sigma():
    with pytest.raises(InvalidParameterError):
        degrade.apply_gaussian_blur(rand_img(), 3, 0.0)


def test_box_blur_center_is_mean():
    img = np.arange(9, dtype=np.float32).reshape(1, 3, 3) / 10
    out = degrade.apply_box_blur(img, 3)
    assert out[0, 1, 1] == pytest.approx(img.mean(), abs=1e-7)


@pytest.mark.parametrize("k", [3, 5, 7])
def test_box_blur_impulse_sums_to_one_and_constant(k):
    img = np.zeros((1, 15, 15), dtype=np.float32)
    img[0, 7, 7] = 1
    assert abs(float(degrade.apply_box_blur(img, k).astype(np.float64).sum()) - 1) < 1e-6
    c = const(0.7)
    assert np.array_equal(degrade.apply_box_blur(c, k), c)


@pytest.mark.parametrize("k", [2, 1, 4.5])
def test_box_blur_bad_kernel(k):
    with pytest.raises(InvalidParameterError):
        degrade.apply_box_blur(rand_img(), k)


def test_blur_uses_replicate_border():
    # a bright left column must not darken at the border (no zero padding)
    img = np.zeros((1, 8, 8), dtype=np.float32)
    img[0, :, 0] = 1.0
    out = degrade.apply_box_blur(img, 3)
    assert out[0, 0, 0] == pytest.approx(2 / 3, abs=1e-6)


# ---------------------------------------------------------------- jpeg

def test_jpeg_quality_100_on_gray():
    img = const(0.5, h=32, w=32)
    out = degrade.apply_jpeg(img, 100)
    assert np.abs(out - img).max() <= 2 / 255 + 1e-7


def test_jpeg_deterministic_and_in_range():
    img = rand_img(h=32, w=32)
    a, b = degrade.apply_jpeg(img, 40), degrade.apply_jpeg(img, 40)
    assert a.tobytes() == b.tobytes()
    assert a.min() >= 0 and a.max() <= 1 and a.shape == img.shape


def test_jpeg_grayscale_shape():
    img = rand_img(c=1, h=24, w=24)
    assert degrade.apply_jpeg(img, 60).shape == img.shape


def test_jpeg_error_carries_kind(monkeypatch):
    monkeypatch.setattr(degrade.cv2, "imencode", lambda *a, **k: (False, None))
    with pytest.raises(DegradationOpError) as info:
        degrade.apply_jpeg(rand_img(), 50)
    assert info.value.kind == "jpeg"


# ---------------------------------------------------------------- colour

def test_color_jitter_values():
    out = degrade.apply_color_jitter(const(0.5), (20, -20, 0))
    assert out[0, 0, 0] == pytest.approx(0.5 + 20 / 255, abs=1e-7)
    assert out[1, 0, 0] == pytest.approx(0.5 - 20 / 255, abs=1e-7)
    assert out[2, 0, 0] == pytest.approx(0.5, abs=1e-7)
    assert out[0, 0, 0] == pytest.approx(0.5784313, abs=1e-6)


def test_color_jitter_identity_and_clamp():
    img = rand_img()
    assert np.array_equal(degrade.apply_color_jitter(img, (0, 0, 0)), img)
    assert np.all(degrade.apply_color_jitter(const(1.0), (20, 20, 20)) == 1.0)


def test_color_jitter_needs_rgb():
    with pytest.raises(InvalidInputError):
        degrade.apply_color_jitter(rand_img(c=1), (1, 2, 3))


# ---------------------------------------------------------------- recipes

def test_recipe_deterministic_and_roundtrip():
    a, b = degrade.make_recipe(42), degrade.make_recipe(42)
    assert a == b
    back = degrade.DegradationRecipe.from_text(a.to_text())
    assert back == a


def test_recipe_inclusion_frequency_and_ranges():
    n = 10_000
    counts = dict.fromkeys(degrade.KINDS, 0)
    for seed in range(n):
        r = degrade.make_recipe(seed)
        kinds = [k for k, _ in r.ops]
        assert len(set(kinds)) == len(kinds)
        for kind, p in r.ops:
            counts[kind] += 1
            if kind == "gaussian_noise":
                assert 5 < p["sigma"] < 50
            elif kind == "gaussian_blur":
                assert p["k"] in (3, 5, 7) and 1.0 < p["sigma"] < 5.0
            elif kind == "jpeg":
                assert 40 < p["quality"] < 100
            elif kind == "color_jitter":
                assert all(-20 < p[c] < 20 for c in "rgb")
            else:
                assert p["k"] in (3, 5, 7)
    for kind, c in counts.items():
        assert abs(c / n - 0.7) <= 0.03, (kind, c / n)


def test_recipe_order_is_random():
    orders = {tuple(k for k, _ in degrade.make_recipe(s, drop_prob=0).ops) for s in range(50)}
    assert len(orders) > 10


def test_recipe_bad_drop_prob():
    with pytest.raises(InvalidParameterError):
        degrade.make_recipe(0, drop_prob=1.5)


def test_unstructured_identity_cases():
    img = rand_img()
    assert np.array_equal(degrade.synthesize_unstructured(img, degrade.DegradationRecipe(0, [])), img)
    only_noise = degrade.DegradationRecipe(0, [("gaussian_noise", {"sigma": 0.0, "seed": 1})])
    assert np.array_equal(degrade.synthesize_unstructured(img, only_noise), img)


GOLDEN_UNSTRUCTURED = "1190b8b2928041d58357e56462c48f207e93c2ab03e27b965a5910e41f618db4"


def test_unstructured_golden_checksum():
    img = toy_images(5, 1, 48)[0]
    out = degrade.synthesize_unstructured(img, degrade.make_recipe(11))
    assert hashlib.sha256(out.tobytes()).hexdigest() == GOLDEN_UNSTRUCTURED


def test_unstructured_missing_param_reports_kind():
    bad = degrade.DegradationRecipe(0, [("box_blur", {})])
    with pytest.raises(DegradationOpError) as info:
        degrade.synthesize_unstructured(rand_img(), bad)
    assert info.value.kind == "box_blur"


# ---------------------------------------------------------------- scratches

def _asset(tex, kind="scratch"):
    return degrade.ScratchAsset(np.asarray(tex, dtype=np.float32), kind)


NO_WARP = dict(elastic_std=0)


def test_blend_zero_opacity():
    img = rand_img()
    out, mask = degrade.blend_scratch(img, _asset(np.ones((16, 16))), "add", 0.0,
                                      degrade.Placement(**NO_WARP))
    assert np.array_equal(out, img) and not mask.any()


def test_lighten_only_with_darker_texture():
    img = const(0.8)
    out, _ = degrade.blend_scratch(img, _asset(np.full((16, 16), 0.5)), "lighten_only", 1.0,
                                   degrade.Placement(**NO_WARP))
    assert np.array_equal(out, img)


def test_screen_formula():
    out, mask = degrade.blend_scratch(const(0.5), _asset(np.full((16, 16), 0.5)), "screen", 1.0,
                                      degrade.Placement(**NO_WARP))
    assert out[0, 3, 3] == pytest.approx(1 - (1 - 0.5) * (1 - 0.5), abs=1e-7)
    assert mask.all()


def test_add_mode_and_mask_threshold():
    tex = np.zeros((16, 16))
    tex[4, :] = 0.04
    tex[8, :] = 0.5
    out, mask = degrade.blend_scratch(const(0.2), _asset(tex), "add", 1.0, degrade.Placement(**NO_WARP))
    assert mask[8].all() and not mask[4].any()
    assert out[0, 8, 0] == pytest.approx(0.7, abs=1e-6)


def test_blend_placement_errors():
    with pytest.raises(InvalidPlacementError):
        degrade.blend_scratch(rand_img(), _asset(np.ones((20, 20))), "add", 0.5,
                              degrade.Placement(**NO_WARP))
    with pytest.raises(InvalidPlacementError):
        degrade.blend_scratch(rand_img(), _asset(np.ones((8, 8))), "add", 0.5,
                              degrade.Placement(top=10, **NO_WARP))


def test_blend_bad_mode_and_opacity():
    with pytest.raises(InvalidParameterError):
        degrade.blend_scratch(rand_img(), _asset(np.ones((16, 16))), "multiply", 0.5)
    with pytest.raises(InvalidParameterError):
        degrade.blend_scratch(rand_img(), _asset(np.ones((16, 16))), "add", 1.5)


def test_asset_validation():
    with pytest.raises(InvalidInputError):
        degrade.ScratchAsset(np.ones((3, 4, 4)), "scratch")
    with pytest.raises(InvalidInputError):
        degrade.ScratchAsset(np.full((4, 4), 2.0), "scratch")
    with pytest.raises(InvalidParameterError):
        degrade.ScratchAsset(np.ones((4, 4)), "dust")


def test_elastic_warp_deterministic_and_in_range():
    tex = np.random.default_rng(0).random((32, 32)).astype(np.float32)
    a = degrade.elastic_warp(tex, 8, 17, np.random.default_rng(1))
    b = degrade.elastic_warp(tex, 8, 17, np.random.default_rng(1))
    assert np.array_equal(a, b) and a.shape == tex.shape
    assert a.min() >= 0 and a.max() <= 1
    assert not np.array_equal(a, tex)


# ---------------------------------------------------------------- structured

@pytest.fixture(scope="module")
def assets():
    return degrade.procedural_assets(3, n_scratch=4, n_paper=2, size=64)


def test_structured_needs_both_asset_kinds(assets):
    with pytest.raises(ConfigurationError):
        degrade.synthesize_structured(rand_img(), [a for a in assets if a.kind == "scratch"], 0)
    with pytest.raises(ConfigurationError):
        degrade.synthesize_structured(rand_img(), [], 0)


def test_structured_deterministic(assets):
    img = rand_img(h=32, w=32)
    a = degrade.synthesize_structured(img, assets, 5)
    b = degrade.synthesize_structured(img, assets, 5)
    assert a[0].tobytes() == b[0].tobytes() and a[1].tobytes() == b[1].tobytes()


def test_structured_mask_is_union_of_parts(assets):
    img = rand_img(h=32, w=32)
    for seed in range(10):
        out, mask, parts = degrade.synthesize_structured(img, assets, seed, return_parts=True)
        union = np.zeros_like(mask)
        for p in parts:
            union = np.logical_or(union, p)
        assert np.array_equal(mask, union.astype(np.uint8))
        assert set(np.unique(mask)) <= {0, 1}
        assert out.shape == img.shape and out.min() >= 0 and out.max() <= 1


def test_structured_without_defects_is_global_only(assets):
    img = rand_img(h=32, w=32)
    cfg = degrade.StructuredConfig(n_scratch=(0, 0), hole_prob=0.0)
    out, mask = degrade.synthesize_structured(img, assets, 4, cfg)
    assert not mask.any()
    expected = degrade.apply_global_defects(img, degrade.stage_seeds(4)[2], cfg)
    assert np.array_equal(out, expected)


def test_structured_nonempty_masks(assets):
    img = rand_img(h=64, w=64)
    nonempty = [degrade.synthesize_structured(img, assets, s)[1].any() for s in range(40)]
    assert np.mean(nonempty) >= 0.9


def test_fit_texture_covers_and_shrinks():
    rng = np.random.default_rng(0)
    tex = np.random.default_rng(1).random((256, 200)).astype(np.float32)
    assert degrade.fit_texture(tex, 64, 64, rng).shape == (64, 64)
    assert degrade.fit_texture(tex[:10, :10], 64, 48, rng).shape == (64, 48)


# ---------------------------------------------------------------- properties

shape = st.tuples(st.sampled_from([1, 3]), st.integers(3, 12), st.integers(3, 12))


@given(shape, st.integers(0, 2**31 - 1))
def test_ops_preserve_shape_and_range(s, seed):
    img = np.random.default_rng(seed).random(s).astype(np.float32)
    outs = [
        degrade.apply_gaussian_noise(img, 30, seed),
        degrade.apply_gaussian_blur(img, 5, 2.0),
        degrade.apply_box_blur(img, 3),
        degrade.apply_jpeg(img, 50),
    ]
    if s[0] == 3:
        outs.append(degrade.apply_color_jitter(img, (15, -15, 5)))
    for out in outs:
        assert out.shape == img.shape and out.dtype == np.float32
        assert out.min() >= 0 and out.max() <= 1


@given(st.integers(0, 2**31 - 1))
def test_recipe_params_in_range_property(seed):
    r = degrade.make_recipe(seed)
    out = degrade.synthesize_unstructured(rand_img(seed % 100, h=12, w=12), r)
    assert out.shape == (3, 12, 12)
    assert degrade.DegradationRecipe.from_text(r.to_text()) == r


@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.floats(0.0, 1.0),
       st.sampled_from(degrade.BLEND_MODES))
def test_blend_never_darkens(v, t, opacity, mode):
    out, _ = degrade.blend_scratch(const(v, h=4, w=4), _asset(np.full((4, 4), t)), mode, opacity,
                                   degrade.Placement(**NO_WARP))
    assert np.all(out >= np.float32(v) - 1e-7)
