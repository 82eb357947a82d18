import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lungkit.errors import ShapeError
from lungkit.preprocess import ClaheParams, ResizeSpec, clahe, normalize, preprocess_image, resize


def test_clahe_single_tile_equalization():
    img = np.array([[0, 0], [255, 255]], np.uint8)
    out = clahe(img, ClaheParams(clip_limit=1000.0, grid=(1, 1)))
    assert out.tolist() == [[128, 128], [255, 255]]


@pytest.mark.parametrize("grid", [(1, 1), (4, 4), (8, 8), (2, 8)])
@pytest.mark.parametrize("clip", [1.0, 2.0, 40.0])
def test_clahe_constant_image_stays_constant(grid, clip):
    # grid-divisible size: every tile has the same pixel count
    out = clahe(np.full((64, 64), 64, np.uint8), ClaheParams(clip, grid))
    assert len(np.unique(out)) == 1


def test_clahe_default_shape_and_range(rng):
    img = rng.integers(0, 256, (128, 128), dtype=np.uint8)
    out = clahe(img)
    assert out.shape == (128, 128) and out.dtype == np.uint8


def test_clahe_handles_remainder_tiles(rng):
    img = rng.integers(0, 256, (37, 53), dtype=np.uint8)
    out = clahe(img, ClaheParams(2.0, (8, 8)))
    assert out.shape == img.shape
    assert np.array_equal(out, clahe(img, ClaheParams(2.0, (8, 8))))


def test_clahe_single_tile_matches_clipped_equalization(rng):
    # one tile means no interpolation: output is exactly the tile mapping
    img = rng.integers(40, 90, (16, 16), dtype=np.uint8)
    n, clip = img.size, 2.0
    hist = np.bincount(img.ravel(), minlength=256)
    limit = int(np.ceil(clip * n / 256))
    excess = int(np.maximum(hist - limit, 0).sum())
    hist = np.minimum(hist, limit) + excess // 256
    hist[: excess % 256] += 1
    mapping = np.floor(255 * np.cumsum(hist) / n + 0.5)
    assert np.array_equal(clahe(img, ClaheParams(clip, (1, 1))), mapping[img])


def test_clahe_rejects_image_smaller_than_grid():
    with pytest.raises(ShapeError):
        clahe(np.zeros((4, 4), np.uint8), ClaheParams(2.0, (8, 8)))


def test_params_validation():
    with pytest.raises(ValueError):
        ClaheParams(0.5)
    with pytest.raises(ValueError):
        ClaheParams(2.0, (0, 4))
    with pytest.raises(ValueError):
        ResizeSpec(0, 4)


@settings(max_examples=40, deadline=None)
@given(arrays(np.uint8, st.tuples(st.integers(8, 40), st.integers(8, 40))), st.floats(1.0, 8.0))
def test_clahe_property_shape_range_determinism(img, clip):
    out = clahe(img, ClaheParams(clip, (4, 4)))
    assert out.shape == img.shape and out.dtype == np.uint8
    assert np.array_equal(out, clahe(img, ClaheParams(clip, (4, 4))))


def test_resize_constant():
    out = resize(np.full((5, 7), 33, np.uint8), ResizeSpec(12, 9, "bilinear"))
    assert out.shape == (9, 12) and np.all(out == 33)


def test_resize_nearest_checkerboard():
    img = np.array([[0, 255], [255, 0]], np.uint8)
    out = resize(img, ResizeSpec(4, 4, "nearest"))
    assert np.array_equal(out, np.kron(img, np.ones((2, 2), np.uint8)))


def test_resize_identity(rng):
    img = rng.integers(0, 256, (6, 11), dtype=np.uint8)
    assert np.array_equal(resize(img, ResizeSpec(11, 6, "nearest")), img)
    assert np.array_equal(resize(img, ResizeSpec(11, 6, "bilinear")), img)


def test_resize_nearest_keeps_masks_binary(rng):
    m = rng.random((13, 17)) < 0.5
    out = resize(m, ResizeSpec(32, 32, "nearest"))
    assert out.dtype == bool and out.shape == (32, 32)
    with pytest.raises(ValueError):
        resize(m, ResizeSpec(32, 32, "bilinear"))


def test_resize_bilinear_downsample_averages():
    img = np.array([[0, 100], [200, 50]], np.uint8)
    # the single output pixel samples the centre of the source grid
    assert resize(img, ResizeSpec(1, 1)).tolist() == [[88]]


def test_normalize_values():
    out = normalize(np.array([[0, 128, 255]], np.uint8))
    assert out.dtype == np.float64
    assert out[0, 0] == 0.0 and out[0, 2] == 1.0
    assert out[0, 1] == pytest.approx(0.50196, abs=1e-5)


@given(st.integers(0, 255), st.integers(0, 255))
def test_normalize_order_preserving(a, b):
    na, nb = normalize(np.array([[a, b]], np.uint8))[0]
    assert (a <= b) == (na <= nb)


def test_preprocess_image_pipeline(rng):
    out = preprocess_image(rng.integers(0, 256, (100, 90), dtype=np.uint8), ClaheParams(), 64)
    assert out.shape == (64, 64) and 0.0 <= out.min() and out.max() <= 1.0
