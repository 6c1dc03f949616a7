"""Image representation, codec I/O, resizing and cropping.

Images are plain ``numpy`` arrays of shape ``(H, W, 3)``, dtype float32,
with samples in ``[0, 1]`` (RGB order). Everything in the package passes
images around in this form.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image as PILImage

__all__ = [
    "BoundingBox",
    "ImageFormatError",
    "as_image",
    "load_image",
    "save_image",
    "resize",
    "crop",
    "to_uint8",
    "luminance",
]


class ImageFormatError(ValueError):
    """Raised for unreadable, unsupported or malformed images."""


@dataclass(frozen=True)
class BoundingBox:
    top: int
    left: int
    height: int
    width: int

    def __post_init__(self):
        if self.height <= 0 or self.width <= 0:
            raise ValueError(f"bounding box must have positive size, got {self}")

    @classmethod
    def full(cls, img: np.ndarray) -> "BoundingBox":
        return cls(0, 0, img.shape[0], img.shape[1])

    @property
    def bottom(self) -> int:
        return self.top + self.height

    @property
    def right(self) -> int:
        return self.left + self.width

    @property
    def center(self) -> tuple[float, float]:
        """(row, col) of the box center in pixel-center coordinates."""
        return (self.top + (self.height - 1) / 2.0, self.left + (self.width - 1) / 2.0)

    def fits(self, height: int, width: int) -> bool:
        return self.top >= 0 and self.left >= 0 and self.bottom <= height and self.right <= width


def as_image(data, *, copy: bool = False) -> np.ndarray:
    """Validate ``data`` as an image and return it as float32 ``(H, W, 3)``."""
    arr = np.array(data, dtype=np.float32, copy=copy) if copy else np.asarray(data, dtype=np.float32)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ImageFormatError(f"expected an (H, W, 3) array, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ImageFormatError(f"image must be at least 1x1, got {arr.shape[:2]}")
    if not np.all(np.isfinite(arr)):
        raise ImageFormatError("image contains non-finite samples")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ImageFormatError(f"samples outside [0, 1]: [{arr.min()}, {arr.max()}]")
    return arr


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def luminance(img: np.ndarray) -> np.ndarray:
    """Rec. 601 luma, shape ``(H, W)``."""
    return img[..., 0] * 0.299 + img[..., 1] * 0.587 + img[..., 2] * 0.114


# ---------------------------------------------------------------------------
# Codecs
# ---------------------------------------------------------------------------

def _read_ppm(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if not raw.startswith(b"P6"):
        raise ImageFormatError(f"{path}: only binary PPM (P6) is supported")
    # header: magic, width, height, maxval; '#' comments allowed between tokens
    tokens: list[bytes] = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageFormatError(f"{path}: truncated PPM header")
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace byte before raster
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise ImageFormatError(f"{path}: malformed PPM header") from exc
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise ImageFormatError(f"{path}: invalid PPM dimensions or maxval")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    count = width * height * 3
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=pos) if len(raw) - pos >= count * dtype.itemsize else None
    if data is None:
        raise ImageFormatError(f"{path}: truncated PPM raster")
    return (data.reshape(height, width, 3).astype(np.float64) / maxval).astype(np.float32)


def _read_png(path: str) -> np.ndarray:
    try:
        with PILImage.open(path) as im:
            im.load()
            mode = im.mode
            if mode in ("RGB",):
                arr = np.asarray(im, dtype=np.uint8)
                return (arr.astype(np.float64) / 255.0).astype(np.float32)
            if mode == "RGBA":
                raise ImageFormatError(f"{path}: expected 3 channels, got 4 (RGBA)")
            if mode in ("L", "I;16", "I", "1", "LA"):
                raise ImageFormatError(f"{path}: expected 3 channels, got single-channel mode {mode}")
            if mode == "P":
                arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
                return (arr.astype(np.float64) / 255.0).astype(np.float32)
            raise ImageFormatError(f"{path}: unsupported PNG mode {mode}")
    except ImageFormatError:
        raise
    except Exception as exc:  # PIL raises a zoo of exception types
        raise ImageFormatError(f"{path}: cannot decode PNG ({exc})") from exc


def load_image(path) -> np.ndarray:
    """Load a PNG or binary PPM file as a float32 ``(H, W, 3)`` image."""
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise FileNotFoundError(path)
    with open(path, "rb") as fh:
        magic = fh.read(8)
    if magic.startswith(b"\x89PNG"):
        return _read_png(path)
    if magic.startswith(b"P6"):
        return _read_ppm(path)
    raise ImageFormatError(f"{path}: unsupported format (PNG and P6 PPM only)")


def save_image(img: np.ndarray, path) -> None:
    """Write ``img`` as 8-bit PNG, or as P6 PPM when the suffix is ``.ppm``.

    Samples are quantized with ``round(s * 255)``.
    """
    img = as_image(img)
    path = os.fspath(path)
    q = to_uint8(img)
    if path.lower().endswith((".ppm", ".pnm")):
        h, w = q.shape[:2]
        with open(path, "wb") as fh:
            fh.write(b"P6\n%d %d\n255\n" % (w, h))
            fh.write(q.tobytes())
        return
    PILImage.fromarray(q, mode="RGB").save(path, format="PNG")


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------

def _linear_taps(n_in: int, n_out: int):
    # half-pixel centers: src = (dst + 0.5) * n_in / n_out - 0.5, clamped to the edge
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    return i0, i1, frac


def resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel center alignment."""
    if out_h < 1 or out_w < 1:
        raise ValueError(f"target size must be positive, got {out_h}x{out_w}")
    img = np.asarray(img, dtype=np.float32)
    h, w = img.shape[:2]
    if (h, w) == (out_h, out_w):
        return img.copy()
    src = img.astype(np.float64)
    r0, r1, fr = _linear_taps(h, out_h)
    c0, c1, fc = _linear_taps(w, out_w)
    fr = fr[:, None, None]
    rows = src[r0] * (1.0 - fr) + src[r1] * fr
    fc = fc[None, :, None]
    out = rows[:, c0] * (1.0 - fc) + rows[:, c1] * fc
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def crop(img: np.ndarray, box: BoundingBox) -> np.ndarray:
    h, w = img.shape[:2]
    if not box.fits(h, w):
        raise ValueError(f"{box} does not fit inside a {h}x{w} image")
    return img[box.top:box.bottom, box.left:box.right].copy()
