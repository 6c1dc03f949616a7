"""Mean-centered training loss, accuracy, SSIM and PSNR.

Loss tensors are ``(N, C, H, W)``; the mean ``E[.]`` is always taken per
image and per channel over the spatial axes, never across the batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = ["LossValue", "MetricsRecord", "loss_defined", "loss_simplified", "loss_backward",
           "accuracy", "ssim", "psnr", "PSNR_CAP", "gaussian_window"]

PSNR_CAP = 100.0


@dataclass
class LossValue:
    value: float
    per_image: list = field(default_factory=list)

    def __float__(self):
        return float(self.value)


@dataclass
class MetricsRecord:
    accuracy: float
    ssim: float
    psnr: float
    split: str = "test"
    image_id: str = ""

    def __post_init__(self):
        if not -1e-9 <= self.accuracy <= 100.0 + 1e-9:
            raise ValueError(f"accuracy {self.accuracy} outside [0, 100]")

    def to_dict(self) -> dict:
        return {"split": self.split, "image_id": self.image_id, "accuracy": self.accuracy,
                "ssim": self.ssim, "psnr": self.psnr}


def _pair(a, b, what: str):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 3:  # single image in CHW
        a, b = a[None], b[None]
    if a.ndim != 4:
        raise ValueError(f"{what}: expected (N, C, H, W) tensors, got {a.shape}")
    return a, b


def _centered(d: np.ndarray) -> np.ndarray:
    return d - d.mean(axis=(2, 3), keepdims=True)


def _loss_from_residual(r: np.ndarray, scale: float) -> LossValue:
    # r: (N, C, H, W); per-image value = scale / (C * H * W) * sum r^2
    per = scale * (r.astype(np.float64) ** 2).mean(axis=(1, 2, 3))
    return LossValue(float(per.mean()), [float(v) for v in per])


def loss_defined(y_d, t_d) -> LossValue:
    """``1/(3N) * sum(((y_d - E[y_d]) - (t_d - E[t_d]))**2)`` in the reconstructed domain."""
    y_d, t_d = _pair(y_d, t_d, "loss_defined")
    r = _centered(y_d.astype(np.float64)) - _centered(t_d.astype(np.float64))
    return _loss_from_residual(r, 1.0)


def loss_simplified(y, t) -> LossValue:
    """``4/(3N) * sum(((t - y) + E[y - t])**2)`` on network outputs and targets."""
    y, t = _pair(y, t, "loss_simplified")
    d = t.astype(np.float64) - y
    r = d + (y - t.astype(np.float64)).mean(axis=(2, 3), keepdims=True)
    return _loss_from_residual(r, 4.0)


def loss_backward(y, t) -> np.ndarray:
    """Gradient of the batch-mean :func:`loss_simplified` with respect to ``y``."""
    y_arr, t_arr = _pair(y, t, "loss_backward")
    n, c, h, w = y_arr.shape
    d = _centered(y_arr.astype(np.float64) - t_arr)
    # centering is an orthogonal projection, so it passes straight through
    g = (8.0 / (n * c * h * w)) * d
    return g.astype(np.asarray(y).dtype).reshape(np.asarray(y).shape)


def accuracy(ref, other) -> float:
    """``100 - 100/(3wh) * sum |ref - other|`` for ``(H, W, 3)`` images in [0, 1]."""
    ref = np.asarray(ref, dtype=np.float64)
    other = np.asarray(other, dtype=np.float64)
    if ref.shape != other.shape:
        raise ValueError(f"accuracy: shape mismatch {ref.shape} vs {other.shape}")
    h, w = ref.shape[:2]
    return float(100.0 - 100.0 / (3.0 * w * h) * np.abs(ref - other).sum())


def psnr(a, b, peak: float = 1.0) -> float:
    """PSNR in dB; zero error is reported as :data:`PSNR_CAP`."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(peak * peak / mse))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(r ** 2) / (2.0 * sigma ** 2))
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    # separable 'valid' correlation over the first two axes
    k = g.size
    h, w = x.shape[:2]
    rows = sum(g[i] * x[i:h - k + 1 + i] for i in range(k))
    return sum(g[j] * rows[:, j:w - k + 1 + j] for j in range(k))


def ssim(a, b, *, window: int = 11, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03,
         data_range: float = 1.0) -> float:
    """Mean SSIM of two ``(H, W, 3)`` images, averaged over channels.

    Local statistics use a normalized Gaussian window and are evaluated only
    where the window fits inside the image.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"ssim: shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if a.shape[0] < window or a.shape[1] < window:
        raise ValueError(f"ssim: image {a.shape[:2]} smaller than the {window}x{window} window")
    g = gaussian_window(window, sigma)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a ** 2
    var_b = _filter_valid(b * b, g) - mu_b ** 2
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))
