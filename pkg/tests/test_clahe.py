import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fundus_dr.clahe import (
    ClaheParams,
    clahe,
    clahe_image,
    clahe_reference,
    clip_histogram,
    tile_bounds,
    tile_mapping,
)
from fundus_dr.image_core import Image


def test_clip_hand_trace_four_bins():
    # clip to [4,0,0,0], excess 6 -> +1 everywhere, remainder 2 to bins 0 and 1
    out = clip_histogram([10, 0, 0, 0], 4)
    assert out.tolist() == [6, 2, 1, 1]


@pytest.mark.parametrize("limit", [5, 9, 100])
def test_clip_no_excess_is_unchanged(limit):
    hist = [5, 3, 0, 1]
    assert clip_histogram(hist, limit).tolist() == hist


@settings(max_examples=200)
@given(st.lists(st.integers(0, 500), min_size=256, max_size=256), st.integers(1, 300))
def test_clip_preserves_total(hist, limit):
    assert clip_histogram(hist, limit).sum() == sum(hist)


def test_tile_mapping_hand_case():
    assert tile_mapping([2, 0, 0, 2], 4).tolist() == [0, 0, 0, 3]


def test_tile_mapping_constant_tile_is_identity():
    hist = np.zeros(256, int)
    hist[77] = 40
    assert tile_mapping(hist, 40).tolist() == list(range(256))


def test_tile_mapping_uniform_hist_is_near_identity():
    lut = tile_mapping(np.full(256, 3), 768)
    # brute force: cdf(v) = 3(v+1), cdf_min = 3 -> 255 * 3v / 765 = v exactly
    expected = [int(np.floor(255 * (3 * (v + 1) - 3) / (768 - 3) + 0.5)) for v in range(256)]
    assert lut.tolist() == expected
    assert np.abs(lut - np.arange(256)).max() <= 1


@settings(max_examples=100)
@given(st.lists(st.integers(0, 50), min_size=256, max_size=256).filter(lambda h: sum(h) > 0))
def test_tile_mapping_monotone_and_bounded(hist):
    lut = tile_mapping(hist, sum(hist))
    assert np.all(np.diff(lut) >= 0)
    assert lut.min() >= 0 and lut.max() <= 255


def test_tile_bounds_near_equal():
    assert tile_bounds(10, 3).tolist() == [0, 3, 6, 10]


@pytest.mark.parametrize("params", [ClaheParams(), ClaheParams(2, 3, 1.0), ClaheParams(1, 1, 256.0)])
@pytest.mark.parametrize("value", [0, 13, 255])
def test_constant_plane_is_fixed_point(params, value):
    plane = np.full((16, 20), value, np.uint8)
    assert np.array_equal(clahe(plane, params), plane)


def test_single_tile_equals_global_mapping(rng):
    plane = rng.integers(30, 120, (12, 9)).astype(np.uint8)
    p = ClaheParams(1, 1, 2.0)
    hist = np.bincount(plane.ravel(), minlength=256)
    lut = tile_mapping(clip_histogram(hist, p.clip_limit(plane.size)), plane.size)
    assert np.array_equal(clahe(plane, p), lut[plane].astype(np.uint8))


def test_matches_reference_16x16(rng):
    plane = rng.integers(0, 256, (16, 16)).astype(np.uint8)
    p = ClaheParams(2, 2, 2.0)
    assert np.array_equal(clahe(plane, p), clahe_reference(plane, p))


def test_large_clip_factor_means_no_clipping(rng):
    plane = rng.integers(0, 256, (10, 10)).astype(np.uint8)
    p = ClaheParams(2, 2, 256.0)
    assert p.clip_limit(25) == 25
    assert np.array_equal(clahe(plane, p), clahe_reference(plane, p))


def test_reference_constant_is_identity():
    plane = np.full((6, 6), 200, np.uint8)
    assert np.array_equal(clahe_reference(plane, ClaheParams(3, 3, 4.0)), plane)


@settings(max_examples=40, deadline=None)
@given(
    arrays(np.uint8, st.tuples(st.integers(4, 20), st.integers(4, 20))),
    st.integers(1, 4),
    st.integers(1, 4),
    st.sampled_from([1.0, 1.5, 2.0, 4.0, 256.0]),
)
def test_matches_reference_property(plane, tr, tc, clip):
    p = ClaheParams(tr, tc, clip)
    assert np.array_equal(clahe(plane, p), clahe_reference(plane, p))


def test_grid_larger_than_image():
    with pytest.raises(ValueError, match="larger than"):
        clahe(np.zeros((4, 4), np.uint8), ClaheParams(5, 2))
    with pytest.raises(ValueError, match="larger than"):
        clahe_reference(np.zeros((4, 4), np.uint8), ClaheParams(2, 5))


def test_params_validation():
    with pytest.raises(ValueError):
        ClaheParams(clip_factor=0.5)
    with pytest.raises(ValueError):
        ClaheParams(tile_rows=0)


def test_clahe_raises_low_contrast(rng):
    plane = rng.integers(100, 120, (32, 32)).astype(np.uint8)
    out = clahe(plane, ClaheParams(4, 4, 4.0))
    assert np.ptp(out) > np.ptp(plane)


def test_clahe_image_rgb_keeps_shape(rng):
    img = Image(rng.integers(0, 256, (16, 16, 3)).astype(np.uint8))
    out = clahe_image(img, ClaheParams(2, 2))
    assert out.pixels.shape == img.pixels.shape
