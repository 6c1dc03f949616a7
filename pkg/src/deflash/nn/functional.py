"""Forward and backward passes for the layers the network is built from.

All tensors are ``numpy`` arrays in NCHW layout. Functions preserve the
input dtype, so the same code runs in float32 for training and float64 for
gradient checks. Backward functions take the forward inputs plus the
upstream gradient and return gradients in the order of the forward inputs.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "conv2d_forward", "conv2d_backward",
    "deconv2d_forward", "deconv2d_backward",
    "maxpool_forward", "maxpool_backward",
    "batchnorm_forward", "batchnorm_backward",
    "activation_forward", "activation_backward",
    "concat_depth", "split_depth",
]


def _pad_amount(padding, k: int) -> int:
    if padding == "same":
        if k % 2 != 1:
            raise ValueError("SAME padding needs an odd kernel")
        return k // 2
    if padding == "valid":
        return 0
    if isinstance(padding, (int, np.integer)) and padding >= 0:
        return int(padding)
    raise ValueError(f"invalid padding {padding!r}")


def _check_stride(stride) -> int:
    if not isinstance(stride, (int, np.integer)) or stride < 1:
        raise ValueError(f"stride must be a positive integer, got {stride!r}")
    return int(stride)


def _im2col(x: np.ndarray, k: int, stride: int, pad: int):
    """Rows are output positions (n, i, j); columns are (c, ki, kj)."""
    n, c, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    oh, ow = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * k * k)
    return cols, oh, ow


def _col2im(cols: np.ndarray, shape, k: int, stride: int, pad: int, oh: int, ow: int) -> np.ndarray:
    n, c, h, w = shape
    cols = cols.reshape(n, oh, ow, c, k, k).transpose(0, 3, 4, 5, 1, 2)
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for ki in range(k):
        for kj in range(k):
            out[:, :, ki:ki + stride * oh:stride, kj:kj + stride * ow:stride] += cols[:, :, ki, kj]
    if pad:
        out = out[:, :, pad:pad + h, pad:pad + w]
    return out


# ---------------------------------------------------------------------------
# Convolution (cross-correlation)
# ---------------------------------------------------------------------------

def conv2d_forward(x, weight, bias=None, stride: int = 1, padding="same"):
    """``weight`` is ``(out_ch, in_ch, k, k)``."""
    stride = _check_stride(stride)
    out_ch, in_ch, k, k2 = weight.shape
    if k != k2:
        raise ValueError("only square kernels are supported")
    if x.ndim != 4 or x.shape[1] != in_ch:
        raise ValueError(f"input {x.shape} does not match weight {weight.shape}")
    pad = _pad_amount(padding, k)
    cols, oh, ow = _im2col(x, k, stride, pad)
    out = cols @ weight.reshape(out_ch, -1).T
    if bias is not None:
        out += bias
    return out.reshape(x.shape[0], oh, ow, out_ch).transpose(0, 3, 1, 2)


def conv2d_backward(x, weight, grad_out, stride: int = 1, padding="same", *, cols=None):
    """Returns ``(grad_input, grad_weight, grad_bias)``."""
    stride = _check_stride(stride)
    out_ch, in_ch, k, _ = weight.shape
    pad = _pad_amount(padding, k)
    n, _, oh, ow = grad_out.shape
    if cols is None:
        cols, oh2, ow2 = _im2col(x, k, stride, pad)
        if (oh2, ow2) != (oh, ow):
            raise ValueError(f"grad_out spatial size {(oh, ow)} does not match forward {(oh2, ow2)}")
    g = grad_out.transpose(0, 2, 3, 1).reshape(-1, out_ch)
    grad_w = (g.T @ cols).reshape(weight.shape)
    grad_b = g.sum(axis=0)
    grad_cols = g @ weight.reshape(out_ch, -1)
    grad_x = _col2im(grad_cols, x.shape, k, stride, pad, oh, ow)
    return grad_x, grad_w, grad_b


# ---------------------------------------------------------------------------
# Transposed convolution
# ---------------------------------------------------------------------------

def deconv2d_forward(x, weight, bias=None, stride: int = 2, padding: int = 1):
    """Transposed convolution; ``weight`` is ``(in_ch, out_ch, k, k)``.

    Output size is ``(H - 1) * stride - 2 * padding + k``, i.e. ``2H`` for
    the 4x4 / stride 2 / pad 1 configuration used by the decoder.
    """
    stride = _check_stride(stride)
    in_ch, out_ch, k, _ = weight.shape
    if x.ndim != 4 or x.shape[1] != in_ch:
        raise ValueError(f"input {x.shape} does not match weight {weight.shape}")
    n, _, h, w = x.shape
    oh = (h - 1) * stride - 2 * padding + k
    ow = (w - 1) * stride - 2 * padding + k
    if oh < 1 or ow < 1:
        raise ValueError("transposed convolution output would be empty")
    xf = x.transpose(0, 2, 3, 1).reshape(-1, in_ch)
    cols = xf @ weight.reshape(in_ch, -1)
    out = _col2im(cols, (n, out_ch, oh, ow), k, stride, padding, h, w)
    if bias is not None:
        out += bias[None, :, None, None]
    return out


def deconv2d_backward(x, weight, grad_out, stride: int = 2, padding: int = 1):
    """Returns ``(grad_input, grad_weight, grad_bias)``."""
    in_ch, out_ch, k, _ = weight.shape
    n, _, h, w = x.shape
    gcols, gh, gw = _im2col(grad_out, k, stride, padding)
    if (gh, gw) != (h, w):
        raise ValueError(f"grad_out {grad_out.shape} inconsistent with input {x.shape}")
    xf = x.transpose(0, 2, 3, 1).reshape(-1, in_ch)
    grad_w = (xf.T @ gcols).reshape(weight.shape)
    grad_x = (gcols @ weight.reshape(in_ch, -1).T).reshape(n, h, w, in_ch).transpose(0, 3, 1, 2)
    grad_b = grad_out.sum(axis=(0, 2, 3))
    return grad_x, grad_w, grad_b


# ---------------------------------------------------------------------------
# Max pooling (2x2, stride 2)
# ---------------------------------------------------------------------------

def maxpool_forward(x):
    """Returns ``(out, argmax)``; odd spatial sizes are padded by replication."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        x = np.pad(x, ((0, 0), (0, 0), (0, h % 2), (0, w % 2)), mode="edge")
    ph, pw = x.shape[2] // 2, x.shape[3] // 2
    win = x.reshape(n, c, ph, 2, pw, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ph, pw, 4)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return out, idx


def maxpool_backward(grad_out, argmax, input_shape):
    n, c, h, w = input_shape
    ph, pw = grad_out.shape[2], grad_out.shape[3]
    win = np.zeros((n, c, ph, pw, 4), dtype=grad_out.dtype)
    np.put_along_axis(win, argmax[..., None], grad_out[..., None], axis=-1)
    full = win.reshape(n, c, ph, pw, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * ph, 2 * pw)
    if (2 * ph, 2 * pw) != (h, w):
        # fold replicated padding back onto the edge row/column it copied
        if 2 * ph != h:
            full[:, :, h - 1] += full[:, :, h]
            full = full[:, :, :h]
        if 2 * pw != w:
            full[:, :, :, w - 1] += full[:, :, :, w]
            full = full[:, :, :, :w]
    return full


# ---------------------------------------------------------------------------
# Batch normalization
# ---------------------------------------------------------------------------

def batchnorm_forward(x, gamma, beta, running_mean, running_var, *, train: bool,
                      momentum: float = 0.9, eps: float = 1e-5):
    """Per-channel normalization over (N, H, W).

    In train mode ``running_mean``/``running_var`` are updated in place as
    ``momentum * running + (1 - momentum) * batch``. Returns ``(out, cache)``.
    """
    if x.shape[0] == 0 or x.size == 0:
        raise ValueError("batch norm on an empty batch")
    if train:
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mean.astype(running_mean.dtype)
        running_var *= momentum
        running_var += (1.0 - momentum) * var.astype(running_var.dtype)
    else:
        mean = running_mean.astype(x.dtype)
        var = running_var.astype(x.dtype)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    return out, (xhat, inv_std, train)


def batchnorm_backward(grad_out, gamma, cache):
    """Returns ``(grad_input, grad_gamma, grad_beta)``."""
    xhat, inv_std, train = cache
    grad_beta = grad_out.sum(axis=(0, 2, 3))
    grad_gamma = (grad_out * xhat).sum(axis=(0, 2, 3))
    g = grad_out * gamma[None, :, None, None]
    if not train:
        return g * inv_std[None, :, None, None], grad_gamma, grad_beta
    m = grad_out.shape[0] * grad_out.shape[2] * grad_out.shape[3]
    grad_x = (inv_std[None, :, None, None] / m) * (
        m * g
        - g.sum(axis=(0, 2, 3))[None, :, None, None]
        - xhat * (g * xhat).sum(axis=(0, 2, 3))[None, :, None, None]
    )
    return grad_x, grad_gamma, grad_beta


# ---------------------------------------------------------------------------
# Activations and concatenation
# ---------------------------------------------------------------------------

def activation_forward(x, kind: str, alpha: float = 0.2):
    if kind == "relu":
        return np.maximum(x, 0)
    if kind == "leaky_relu":
        return np.where(x > 0, x, x * x.dtype.type(alpha))
    if kind == "sigmoid":
        # split by sign to keep exp() from overflowing
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return out
    raise ValueError(f"unknown activation {kind!r}")


def activation_backward(grad_out, x, out, kind: str, alpha: float = 0.2):
    """``x`` is the activation input and ``out`` its output."""
    if kind == "relu":
        return grad_out * (x > 0)
    if kind == "leaky_relu":
        return np.where(x > 0, grad_out, grad_out * grad_out.dtype.type(alpha))
    if kind == "sigmoid":
        return grad_out * out * (1 - out)
    raise ValueError(f"unknown activation {kind!r}")


def concat_depth(a, b):
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ValueError(f"cannot concatenate {a.shape} and {b.shape} along channels")
    return np.concatenate([a, b], axis=1)


def split_depth(grad_out, channels_a: int):
    return grad_out[:, :channels_a], grad_out[:, channels_a:]
