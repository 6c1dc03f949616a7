"""Problem encodings for flash-to-ambient regression.

Three ways of posing the regression are supported:

* ``A``: the network maps the flash image straight to the ambient image.
* ``B``: the network predicts the normalized raw difference ``(x - o + 1) / 2``.
* ``C``: the network sees ``BL(x)`` and predicts the normalized difference
  of the filtered images, ``(BL(x) - BL(o) + 1) / 2``. High frequencies are
  taken back from the unfiltered input when reconstructing.

``C`` is the encoding used for training and inference everywhere else.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .bilateral import FilterParams, bilateral

__all__ = ["EncodingKind", "EncodedSample", "encode", "reconstruct", "precondition_truth", "output_image"]


class EncodingKind(str, enum.Enum):
    A = "A"  # direct
    B = "B"  # raw difference
    C = "C"  # filtered difference

    @classmethod
    def parse(cls, value) -> "EncodingKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise ValueError(f"unknown encoding {value!r}; expected one of A, B, C") from None


@dataclass
class EncodedSample:
    net_input: np.ndarray
    target: np.ndarray
    raw_input: np.ndarray
    raw_truth: Optional[np.ndarray] = None
    kind: EncodingKind = EncodingKind.C

    def __post_init__(self):
        shapes = {a.shape for a in (self.net_input, self.target, self.raw_input) if a is not None}
        if self.raw_truth is not None:
            shapes.add(self.raw_truth.shape)
        if len(shapes) != 1:
            raise ValueError(f"encoded images disagree in shape: {sorted(shapes)}")


def _same_shape(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def encode(x: np.ndarray, o: np.ndarray, params: FilterParams | None = None,
           kind: EncodingKind | str = EncodingKind.C, *, method: str = "auto",
           filtered: tuple[np.ndarray, np.ndarray] | None = None) -> EncodedSample:
    """Build the (input, target) pair for flash image ``x`` and ambient image ``o``.

    ``filtered`` may carry precomputed ``(BL(x), BL(o))`` to skip filtering.
    """
    x = np.asarray(x, dtype=np.float32)
    o = np.asarray(o, dtype=np.float32)
    _same_shape(x, o, "encode")
    kind = EncodingKind.parse(kind)
    if kind is EncodingKind.A:
        return EncodedSample(x, o.copy(), x, o, kind)
    if kind is EncodingKind.B:
        target = (x.astype(np.float64) - o + 1.0) / 2.0
        return EncodedSample(x, target.astype(np.float32), x, o, kind)
    if filtered is None:
        filtered = (bilateral(x, params, method=method), bilateral(o, params, method=method))
    bx, bo = filtered
    target = (bx.astype(np.float64) - bo + 1.0) / 2.0
    return EncodedSample(bx, target.astype(np.float32), x, o, kind)


def precondition_truth(x: np.ndarray, t: np.ndarray, *, clamp: bool = False) -> np.ndarray:
    """Best reconstruction reachable from ``x`` given a perfect target: ``x - 2t + 1``.

    Left unclamped by default because metrics are computed on it.
    """
    x = np.asarray(x)
    t = np.asarray(t)
    _same_shape(x, t, "precondition_truth")
    out = (x.astype(np.float32) - np.float32(2.0) * t.astype(np.float32)) + np.float32(1.0)
    return np.clip(out, 0.0, 1.0) if clamp else out


def reconstruct(x: np.ndarray, y: np.ndarray, *, clamp: bool = True) -> np.ndarray:
    """Turn a predicted normalized difference ``y`` back into an image: ``x - 2y + 1``."""
    return precondition_truth(x, y, clamp=clamp)


def output_image(kind: EncodingKind | str, x: np.ndarray, y: np.ndarray, *, clamp: bool = True) -> np.ndarray:
    """Final image produced by a network prediction ``y`` under encoding ``kind``."""
    kind = EncodingKind.parse(kind)
    if kind is EncodingKind.A:
        out = np.asarray(y, dtype=np.float32)
        return np.clip(out, 0.0, 1.0) if clamp else out
    return reconstruct(x, y, clamp=clamp)
