"""Edge-preserving bilateral filtering.

Two implementations share one contract:

* :func:`bilateral_exact` evaluates the truncated-window sum directly and is
  the reference used to validate everything else.
* :func:`bilateral_fast` is a bilateral grid. Pixels are splatted into a
  5-D lattice (row, col, r, g, b) whose spacing is proportional to the
  sigmas, the lattice is blurred with a separable Gaussian, and the result
  is sliced back out with multilinear interpolation.

Both use clamp-to-edge borders and the joint Euclidean RGB distance for
the range weight.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter1d

__all__ = ["FilterParams", "bilateral_exact", "bilateral_fast", "bilateral", "choose_sigmas"]


@dataclass(frozen=True)
class FilterParams:
    sigma_s: float
    sigma_r: float

    def __post_init__(self):
        if not (self.sigma_s > 0 and self.sigma_r > 0):
            raise ValueError(f"sigmas must be positive, got sigma_s={self.sigma_s}, sigma_r={self.sigma_r}")


def choose_sigmas(img: np.ndarray) -> FilterParams:
    """Spatial sigma at 3% of the longest side, range sigma 0.4."""
    h, w = img.shape[:2]
    return FilterParams(sigma_s=0.03 * max(h, w), sigma_r=0.4)


def _check(img, params: FilterParams) -> np.ndarray:
    if not isinstance(params, FilterParams):
        params = FilterParams(*params)
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got shape {img.shape}")
    return img


def bilateral_exact(img: np.ndarray, params: FilterParams) -> np.ndarray:
    """Brute-force bilateral filter over a ``ceil(3 sigma_s)`` window."""
    img = _check(img, params)
    h, w = img.shape[:2]
    radius = int(math.ceil(3.0 * params.sigma_s))
    src = img.astype(np.float64)
    padded = np.pad(src, ((radius, radius), (radius, radius), (0, 0)), mode="edge")
    inv_s = -1.0 / (2.0 * params.sigma_s ** 2)
    inv_r = -1.0 / (2.0 * params.sigma_r ** 2)

    num = np.zeros_like(src)
    den = np.zeros((h, w), dtype=np.float64)
    # fixed summation order per pixel: row offsets outer, column offsets inner
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            ws = math.exp((dy * dy + dx * dx) * inv_s)
            nb = padded[radius + dy:radius + dy + h, radius + dx:radius + dx + w]
            diff = nb - src
            wgt = ws * np.exp(np.einsum("ijc,ijc->ij", diff, diff) * inv_r)
            num += wgt[..., None] * nb
            den += wgt
    out = num / den[..., None]
    return np.clip(out, 0.0, 1.0).astype(np.float32)


# Lattice spacing as a fraction of sigma. Splat + slice each add a tent of
# variance spacing**2 / 6 per axis; the grid blur is narrowed to compensate.
_SPATIAL_STEP = 1.0
_RANGE_STEP = 0.8
_MAX_CELLS = 40_000_000


def _axis_setup(n: int, step: float):
    # symmetric cell layout about the axis center so that mirroring the input
    # mirrors the lattice
    half = (n - 1) / 2.0
    k = int(math.ceil(half / step)) + 2
    return k, 2 * k + 1


def bilateral_fast(img: np.ndarray, params: FilterParams) -> np.ndarray:
    """Bilateral-grid approximation of :func:`bilateral_exact`."""
    img = _check(img, params)
    sigma_s, sigma_r = params.sigma_s, params.sigma_r
    radius = int(math.ceil(3.0 * sigma_s))
    src = img.astype(np.float64)
    # replicate borders explicitly so the lattice sees clamp-to-edge context
    padded = np.pad(src, ((radius, radius), (radius, radius), (0, 0)), mode="edge")
    ph, pw = padded.shape[:2]

    s_step = max(_SPATIAL_STEP * sigma_s, 1e-6)
    r_step = _RANGE_STEP * sigma_r
    ky, ny = _axis_setup(ph, s_step)
    kx, nx = _axis_setup(pw, s_step)
    nr = int(math.ceil(1.0 / r_step)) + 3
    shape = (ny, nx, nr, nr, nr)
    if ny * nx * nr ** 3 > _MAX_CELLS:
        raise MemoryError(
            f"bilateral grid of {shape} cells is too large; increase sigma_r or use bilateral_exact"
        )

    rows = np.arange(ph, dtype=np.float64)
    cols = np.arange(pw, dtype=np.float64)
    gy = (rows - (ph - 1) / 2.0) / s_step + ky
    gx = (cols - (pw - 1) / 2.0) / s_step + kx
    gy, gx = np.broadcast_to(gy[:, None], (ph, pw)), np.broadcast_to(gx[None, :], (ph, pw))
    gc = padded / r_step + 1.0
    coords = [gy.ravel(), gx.ravel(), gc[..., 0].ravel(), gc[..., 1].ravel(), gc[..., 2].ravel()]

    base = [np.floor(c).astype(np.intp) for c in coords]
    frac = [c - b for c, b in zip(coords, base)]
    strides = np.array([nx * nr ** 3, nr ** 3, nr ** 2, nr, 1], dtype=np.intp)
    lin0 = sum(b * s for b, s in zip(base, strides))

    values = np.concatenate([padded.reshape(-1, 3), np.ones((ph * pw, 1))], axis=1)
    ncell = ny * nx * nr ** 3
    grid = np.zeros((ncell, 4), dtype=np.float64)
    corners = []
    for corner in range(32):
        bits = [(corner >> a) & 1 for a in range(5)]
        wgt = np.ones(ph * pw, dtype=np.float64)
        offset = 0
        for a, bit in enumerate(bits):
            wgt *= frac[a] if bit else (1.0 - frac[a])
            offset += bit * strides[a]
        idx = lin0 + offset
        corners.append((idx, wgt))
        for ch in range(4):
            grid[:, ch] += np.bincount(idx, weights=wgt * values[:, ch], minlength=ncell)

    grid = grid.reshape(shape + (4,))
    blur_s = math.sqrt(max((sigma_s / s_step) ** 2 - 1.0 / 3.0, 1e-6))
    blur_r = math.sqrt(max((sigma_r / r_step) ** 2 - 1.0 / 3.0, 1e-6))
    for axis, sig in enumerate((blur_s, blur_s, blur_r, blur_r, blur_r)):
        grid = gaussian_filter1d(grid, sig, axis=axis, mode="constant", truncate=4.0)
    grid = grid.reshape(ncell, 4)

    acc = np.zeros((ph * pw, 4), dtype=np.float64)
    for idx, wgt in corners:
        acc += wgt[:, None] * grid[idx]
    out = acc[:, :3] / np.maximum(acc[:, 3:], 1e-300)
    out = out.reshape(ph, pw, 3)[radius:radius + img.shape[0], radius:radius + img.shape[1]]
    return np.clip(out, 0.0, 1.0).astype(np.float32)


# window size (in taps) below which the direct sum beats building a grid
_EXACT_WINDOW_LIMIT = 19 * 19


def bilateral(img: np.ndarray, params: FilterParams | None = None, *, method: str = "auto") -> np.ndarray:
    """Filter ``img`` with ``method`` in {"auto", "exact", "fast"}.

    Sigmas default to :func:`choose_sigmas`. ``"auto"`` takes the direct sum
    for small windows, where it is both cheaper and exact, and the grid
    otherwise.
    """
    if params is None:
        params = choose_sigmas(img)
    if method == "auto":
        radius = int(math.ceil(3.0 * params.sigma_s))
        method = "exact" if (2 * radius + 1) ** 2 <= _EXACT_WINDOW_LIMIT else "fast"
    if method == "exact":
        return bilateral_exact(img, params)
    if method == "fast":
        return bilateral_fast(img, params)
    raise ValueError(f"unknown bilateral method {method!r}")
