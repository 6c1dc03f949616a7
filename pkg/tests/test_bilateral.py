import math

import numpy as np
import pytest
from scipy.ndimage import correlate

from deflash.bilateral import FilterParams, bilateral, bilateral_exact, bilateral_fast, choose_sigmas


def gaussian_blur_oracle(img, sigma):
    """Truncated, normalized Gaussian blur with edge replication."""
    r = int(math.ceil(3 * sigma))
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    k = np.exp(-(yy ** 2 + xx ** 2) / (2 * sigma ** 2))
    k /= k.sum()
    return np.stack([correlate(img[..., c].astype(np.float64), k, mode="nearest") for c in range(3)], -1)


@pytest.mark.parametrize("fn", [bilateral_exact, bilateral_fast])
@pytest.mark.parametrize("c", [0.0, 0.3, 1.0])
def test_constant_image_is_fixed_point(fn, c):
    img = np.full((20, 24, 3), c, np.float32)
    out = fn(img, FilterParams(3.0, 0.4))
    assert np.abs(out - c).max() <= 1e-6


def test_infinite_range_sigma_is_gaussian_blur(rng):
    img = rng.random((24, 24, 3)).astype(np.float32)
    out = bilateral_exact(img, FilterParams(2.5, 1e6))
    assert np.abs(out - gaussian_blur_oracle(img, 2.5)).max() <= 1e-4


def test_fast_matches_exact_on_random_image(rng):
    img = rng.random((32, 32, 3)).astype(np.float32)
    p = FilterParams(4.0, 0.4)
    assert np.abs(bilateral_fast(img, p) - bilateral_exact(img, p)).mean() <= 0.01


def test_step_edge_preserved():
    img = np.full((16, 16, 3), 0.1, np.float32)
    img[:, 8:] = 0.9
    p = FilterParams(4.0, 0.1)
    for fn in (bilateral_exact, bilateral_fast):
        out = fn(img, p)
        assert np.abs(out[:, 7] - 0.1).max() < 0.05
        assert np.abs(out[:, 8] - 0.9).max() < 0.05


@pytest.mark.parametrize("fn, tol", [(bilateral_exact, 1e-6), (bilateral_fast, 1e-3)])
def test_horizontal_flip_symmetry(rng, fn, tol):
    img = rng.random((20, 27, 3)).astype(np.float32)
    p = FilterParams(3.0, 0.3)
    a = fn(img[:, ::-1], p)
    b = fn(img, p)[:, ::-1]
    assert np.abs(a - b).max() <= tol


@pytest.mark.parametrize("fn", [bilateral_exact, bilateral_fast])
def test_output_within_channel_range(rng, fn):
    img = (0.2 + 0.5 * rng.random((18, 18, 3))).astype(np.float32)
    out = fn(img, FilterParams(2.0, 0.2))
    lo = img.reshape(-1, 3).min(0)
    hi = img.reshape(-1, 3).max(0)
    assert np.all(out >= lo - 1e-6) and np.all(out <= hi + 1e-6)


@pytest.mark.parametrize("bad", [(0.0, 0.4), (2.0, 0.0), (-1.0, 0.1)])
def test_non_positive_sigmas_rejected(bad):
    with pytest.raises(ValueError):
        FilterParams(*bad)


def test_choose_sigmas():
    p = choose_sigmas(np.zeros((512, 512, 3)))
    assert p.sigma_s == pytest.approx(15.36)
    assert p.sigma_r == 0.4
    assert choose_sigmas(np.zeros((100, 50, 3))) == FilterParams(3.0, 0.4)
    assert choose_sigmas(np.zeros((1, 1, 3))).sigma_s == pytest.approx(0.03)


def test_auto_method_dispatch(rng):
    img = rng.random((16, 16, 3)).astype(np.float32)
    small = FilterParams(1.0, 0.4)
    np.testing.assert_array_equal(bilateral(img, small), bilateral_exact(img, small))
    large = FilterParams(5.0, 0.4)
    np.testing.assert_array_equal(bilateral(img, large), bilateral_fast(img, large))
    with pytest.raises(ValueError):
        bilateral(img, small, method="other")


def test_tiny_sigma_exact_is_identity(rng):
    img = rng.random((5, 5, 3)).astype(np.float32)
    np.testing.assert_allclose(bilateral_exact(img, FilterParams(0.03, 0.4)), img, atol=1e-6)
