"""Affine registration by mutual information.

The search is a (1+1) evolution strategy over six affine parameters
(rotation, two log-scales, shear, two translations, all about the image
center) with the 1/5th success rule for the step size. It runs coarse to
fine on a small pyramid and always keeps the best parameters seen.
Mutual information on a 32x32 joint luminance histogram is indifferent to
how the two exposures are lit, which is what makes flash/ambient pairs
registrable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter, map_coordinates

from .image import luminance

__all__ = ["AffineTransform", "warp_affine", "mutual_information", "register_affine", "RegistrationError"]


class RegistrationError(ValueError):
    pass


@dataclass(frozen=True)
class AffineTransform:
    """2x3 matrix acting on ``(x, y) = (col, row)`` pixel coordinates.

    ``warp_affine(img, T)`` moves the content at ``q`` to ``T(q)``.
    """

    matrix: tuple

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (2, 3):
            raise ValueError(f"affine matrix must be 2x3, got {m.shape}")
        object.__setattr__(self, "matrix", tuple(tuple(float(v) for v in row) for row in m))

    @property
    def array(self) -> np.ndarray:
        return np.array(self.matrix, dtype=np.float64)

    @property
    def linear(self) -> np.ndarray:
        return self.array[:, :2]

    @property
    def determinant(self) -> float:
        return float(np.linalg.det(self.linear))

    @classmethod
    def identity(cls) -> "AffineTransform":
        return cls(((1.0, 0.0, 0.0), (0.0, 1.0, 0.0)))

    @classmethod
    def translation(cls, dx: float, dy: float) -> "AffineTransform":
        return cls(((1.0, 0.0, dx), (0.0, 1.0, dy)))

    @classmethod
    def from_params(cls, angle: float = 0.0, log_sx: float = 0.0, log_sy: float = 0.0, shear: float = 0.0,
                    tx: float = 0.0, ty: float = 0.0, center=(0.0, 0.0)) -> "AffineTransform":
        """``T(q) = R(angle) S Sh (q - center) + center + (tx, ty)``; ``angle`` in radians."""
        c, s = math.cos(angle), math.sin(angle)
        rot = np.array([[c, -s], [s, c]])
        lin = rot @ np.diag([math.exp(log_sx), math.exp(log_sy)]) @ np.array([[1.0, shear], [0.0, 1.0]])
        ctr = np.asarray(center, dtype=np.float64)
        offset = ctr + np.array([tx, ty]) - lin @ ctr
        return cls(np.column_stack([lin, offset]))

    @classmethod
    def rotation(cls, degrees: float, center) -> "AffineTransform":
        return cls.from_params(angle=math.radians(degrees), center=center)

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        m = self.array
        return p @ m[:, :2].T + m[:, 2]

    def inverse(self) -> "AffineTransform":
        lin = self.linear
        if abs(np.linalg.det(lin)) < 1e-12:
            raise ValueError("affine transform is singular")
        inv = np.linalg.inv(lin)
        return AffineTransform(np.column_stack([inv, -inv @ self.array[:, 2]]))

    def compose(self, other: "AffineTransform") -> "AffineTransform":
        """``self o other`` (apply ``other`` first)."""
        a = np.vstack([self.array, [0, 0, 1]])
        b = np.vstack([other.array, [0, 0, 1]])
        return AffineTransform((a @ b)[:2])

    @property
    def angle_degrees(self) -> float:
        lin = self.linear
        return math.degrees(math.atan2(lin[1, 0] - lin[0, 1], lin[0, 0] + lin[1, 1]))

    def is_identity(self) -> bool:
        return self.matrix == AffineTransform.identity().matrix


def _source_coords(shape, T: AffineTransform):
    h, w = shape
    inv = T.inverse().array
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    sx = inv[0, 0] * xs + inv[0, 1] * ys + inv[0, 2]
    sy = inv[1, 0] * xs + inv[1, 1] * ys + inv[1, 2]
    return sy, sx


def warp_affine(img: np.ndarray, T: AffineTransform) -> np.ndarray:
    """Bilinear resampling of ``img`` under ``T``; samples outside are clamped to the edge."""
    if T.determinant == 0.0 or abs(T.determinant) < 1e-12:
        raise ValueError("cannot warp with a singular affine transform")
    img = np.asarray(img)
    if T.is_identity():
        return img.copy()
    sy, sx = _source_coords(img.shape[:2], T)
    # snap coordinates that are integers up to rounding noise
    for c in (sy, sx):
        r = np.round(c)
        near = np.abs(c - r) < 1e-9
        c[near] = r[near]
    src = img.astype(np.float64)
    if src.ndim == 2:
        out = map_coordinates(src, [sy, sx], order=1, mode="nearest")
    else:
        out = np.stack([map_coordinates(src[..., ch], [sy, sx], order=1, mode="nearest")
                        for ch in range(src.shape[2])], axis=-1)
    return out.astype(img.dtype)


def _binned(g: np.ndarray, bins: int) -> np.ndarray:
    lo, hi = float(g.min()), float(g.max())
    if hi - lo < 1e-8:
        raise RegistrationError("cannot register a constant image")
    return np.minimum(((g - lo) / (hi - lo) * bins).astype(np.intp), bins - 1)


def mutual_information(a_bins: np.ndarray, b_bins: np.ndarray, bins: int = 32, mask=None) -> float:
    """Mutual information (nats) between two pre-binned integer images."""
    a = a_bins.ravel()
    b = b_bins.ravel()
    if mask is not None:
        m = mask.ravel()
        a, b = a[m], b[m]
    if a.size == 0:
        return 0.0
    joint = np.bincount(a * bins + b, minlength=bins * bins).reshape(bins, bins).astype(np.float64)
    joint /= joint.sum()
    pa = joint.sum(axis=1, keepdims=True)
    pb = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    return float(np.sum(joint[nz] * np.log(joint[nz] / (pa @ pb)[nz])))


class _Level:
    """One pyramid level: downsampled luminance plus fixed binning ranges."""

    def __init__(self, moving: np.ndarray, reference: np.ndarray, factor: float, bins: int):
        self.factor = factor
        if factor > 1:
            moving = _shrink(moving, factor)
            reference = _shrink(reference, factor)
        self.moving = moving
        self.shape = moving.shape
        self.bins = bins
        self.lo, self.hi = float(moving.min()), float(moving.max())
        self.ref_bins = _binned(reference, bins)
        h, w = self.shape
        self.center = ((w - 1) / 2.0, (h - 1) / 2.0)

    def transform(self, p) -> AffineTransform:
        return AffineTransform.from_params(p[0], p[1], p[2], p[3], p[4] / self.factor, p[5] / self.factor,
                                           center=self.center)

    def score(self, p) -> float:
        T = self.transform(p)
        if abs(T.determinant) < 1e-6:
            return -np.inf
        sy, sx = _source_coords(self.shape, T)
        h, w = self.shape
        mask = (sy >= 0) & (sy <= h - 1) & (sx >= 0) & (sx <= w - 1)
        if mask.sum() < 0.25 * h * w:
            return -np.inf
        warped = map_coordinates(self.moving, [sy, sx], order=1, mode="nearest")
        wb = np.minimum(((warped - self.lo) / (self.hi - self.lo) * self.bins).astype(np.intp), self.bins - 1)
        wb = np.clip(wb, 0, self.bins - 1)
        return mutual_information(wb, self.ref_bins, self.bins, mask)


def _shrink(g: np.ndarray, factor: float) -> np.ndarray:
    h, w = g.shape
    oh, ow = max(8, int(round(h / factor))), max(8, int(round(w / factor)))
    blurred = gaussian_filter(g, sigma=0.5 * factor, mode="nearest")
    ys = (np.arange(oh) + 0.5) * (h / oh) - 0.5
    xs = (np.arange(ow) + 0.5) * (w / ow) - 0.5
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return map_coordinates(blurred, [yy, xx], order=1, mode="nearest")


# per-parameter mutation scales: angle (rad), log sx, log sy, shear, tx (px), ty (px)
_SCALES = np.array([0.03, 0.02, 0.02, 0.02, 1.0, 1.0])


def _evolve(level: _Level, start: np.ndarray, scales: np.ndarray, limits: np.ndarray, iterations: int, rng):
    """(1+1)-ES with the one-fifth success rule; returns (params, score).

    Offspring outside ``limits`` (per-parameter absolute bounds) count as failures.
    """
    best, best_score = start, level.score(start)
    sigma = 1.0
    for _ in range(iterations):
        child = best + sigma * scales * rng.standard_normal(6)
        s = level.score(child) if np.all(np.abs(child) <= limits) else -np.inf
        if s > best_score:
            best, best_score = child, s
            sigma *= math.exp(0.8)
        else:
            sigma *= math.exp(-0.2)
        sigma = min(max(sigma, 1e-3), 5.0)
    return best, best_score


def register_affine(moving: np.ndarray, reference: np.ndarray, iterations: int = 500, *,
                    seed: int = 0, bins: int = 32, levels: int = 3, max_size: int = 256,
                    restarts: int = 5) -> AffineTransform:
    """Affine ``T`` such that ``warp_affine(moving, T)`` lines up with ``reference``.

    ``iterations`` is the evolution-strategy budget per pyramid level.
    Images larger than ``max_size`` are registered on a downsampled copy;
    the returned transform is in full-resolution pixel units. The coarsest
    level runs ``restarts`` independent searches and keeps the best. The
    search is confined to rotations within 30 degrees, scale and shear
    within about 30%, and shifts within a quarter of the image size.
    """
    moving = np.asarray(moving)
    reference = np.asarray(reference)
    if moving.shape != reference.shape:
        raise ValueError(f"register_affine: shape mismatch {moving.shape} vs {reference.shape}")
    gm = luminance(moving).astype(np.float64) if moving.ndim == 3 else moving.astype(np.float64)
    gr = luminance(reference).astype(np.float64) if reference.ndim == 3 else reference.astype(np.float64)
    for g, name in ((gm, "moving"), (gr, "reference")):
        if g.max() - g.min() < 1e-8:
            raise RegistrationError(f"{name} image is constant")

    rng = np.random.default_rng(seed)
    base = max(1.0, max(gm.shape) / max_size)
    factors = [base * 2 ** k for k in range(levels - 1, -1, -1)]
    factors = [f for f in factors if min(gm.shape) / f >= 16] or [base]

    h, w = gm.shape
    full_center = ((w - 1) / 2.0, (h - 1) / 2.0)
    limits = np.array([math.radians(30), 0.3, 0.3, 0.3, 0.25 * w, 0.25 * h])
    best = np.zeros(6)
    for li, factor in enumerate(factors):
        level = _Level(gm, gr, factor, bins)
        scales = _SCALES.copy()
        scales[4:] *= factor  # a step of about one level pixel
        # independent starts on the coarsest level guard against a bad early basin
        starts = [np.zeros(6)] * restarts if li == 0 else [best]
        results = [_evolve(level, p0, scales, limits, iterations, rng) for p0 in starts]
        best, best_score = max(results, key=lambda r: r[1])
        if li == len(factors) - 1 and level.score(np.zeros(6)) > best_score:
            best = np.zeros(6)  # never return something worse than doing nothing
    return AffineTransform.from_params(*best, center=full_center)
