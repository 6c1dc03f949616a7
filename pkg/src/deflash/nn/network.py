"""Encoder-decoder network with depth-concatenated shortcut connections.

Encoder: the 13 convolutions of VGG-16 in five blocks (2, 2, 3, 3, 3), each
3x3 / stride 1 / SAME followed by ReLU, with a 2x2 max pool closing every
block. The pre-pool output of each block is kept as a shortcut.

Bridge: one more 3x3 convolution + batch norm + LeakyReLU on the deepest map.

Decoder: five levels, deepest first. Each level upsamples 2x with a 4x4
transposed convolution, concatenates the matching encoder shortcut along
channels, and applies conv + batch norm + LeakyReLU.

Head: 3x3 convolution to three channels and a sigmoid.

Init: truncated normal weights, Xavier uniform head, zero biases. Batch-norm
scales start at 1 except on the last decoder level, which starts at
``final_gamma`` (0 by default) so an untrained network predicts "no change".
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import functional as F

__all__ = ["LayerSpec", "NetworkSpec", "Network", "build_network", "truncated_normal", "xavier_bound",
           "images_to_tensor", "tensor_to_images"]

VGG_WIDTHS = (64, 128, 256, 512, 512)
VGG_CONVS = (2, 2, 3, 3, 3)


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str  # conv | maxpool | relu | leaky_relu | batchnorm | deconv | concat | sigmoid
    in_ch: int = 0
    out_ch: int = 0
    kernel: int = 0
    stride: int = 1
    alpha: float = 0.0
    eps: float = 0.0
    partner: str = ""


@dataclass(frozen=True)
class NetworkSpec:
    width_multiplier: float = 1.0
    encoder_convs: tuple = VGG_CONVS
    base_widths: tuple = VGG_WIDTHS
    alpha: float = 0.2
    bn_eps: float = 1e-5
    bn_momentum: float = 0.9
    init_std: float = 0.1
    deconv_kernel: int = 4
    # batch-norm scale of the last decoder level; 0 makes a fresh network output 0.5 everywhere
    final_gamma: float = 0.0

    def __post_init__(self):
        if not (self.width_multiplier > 0) or not math.isfinite(self.width_multiplier):
            raise ValueError(f"width multiplier must be positive, got {self.width_multiplier}")
        if len(self.encoder_convs) != len(self.base_widths):
            raise ValueError("encoder_convs and base_widths must have one entry per block")
        bad = [w for w in self.base_widths if round(w * self.width_multiplier) < 1]
        if bad:
            raise ValueError(f"width multiplier {self.width_multiplier} leaves a block with no channels")

    @property
    def widths(self) -> tuple:
        return tuple(int(round(w * self.width_multiplier)) for w in self.base_widths)

    @property
    def depth(self) -> int:
        return len(self.base_widths)

    @property
    def divisor(self) -> int:
        """Input height and width must be multiples of this."""
        return 2 ** self.depth

    def to_dict(self) -> dict:
        return {
            "width_multiplier": self.width_multiplier,
            "encoder_convs": list(self.encoder_convs),
            "base_widths": list(self.base_widths),
            "alpha": self.alpha,
            "bn_eps": self.bn_eps,
            "bn_momentum": self.bn_momentum,
            "init_std": self.init_std,
            "deconv_kernel": self.deconv_kernel,
            "final_gamma": self.final_gamma,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        d = dict(d)
        for key in ("encoder_convs", "base_widths"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    def layers(self) -> list[LayerSpec]:
        """Flat, ordered description of every layer in the graph."""
        out: list[LayerSpec] = []
        widths = self.widths
        ch = 3
        for b, (n_conv, w) in enumerate(zip(self.encoder_convs, widths), start=1):
            for j in range(1, n_conv + 1):
                out.append(LayerSpec(f"enc{b}_{j}", "conv", ch, w, 3))
                out.append(LayerSpec(f"enc{b}_{j}.act", "relu"))
                ch = w
            out.append(LayerSpec(f"pool{b}", "maxpool", kernel=2, stride=2))
        out.append(LayerSpec("bridge", "conv", ch, ch, 3))
        out.append(LayerSpec("bridge.bn", "batchnorm", ch, ch, eps=self.bn_eps))
        out.append(LayerSpec("bridge.act", "leaky_relu", alpha=self.alpha))
        for b in range(self.depth, 0, -1):
            w = widths[b - 1]
            out.append(LayerSpec(f"dec{b}.up", "deconv", ch, w, self.deconv_kernel, stride=2))
            out.append(LayerSpec(f"dec{b}.cat", "concat", w, 2 * w, partner=f"enc{b}_{self.encoder_convs[b - 1]}"))
            out.append(LayerSpec(f"dec{b}.conv", "conv", 2 * w, w, 3))
            out.append(LayerSpec(f"dec{b}.bn", "batchnorm", w, w, eps=self.bn_eps))
            out.append(LayerSpec(f"dec{b}.act", "leaky_relu", alpha=self.alpha))
            ch = w
        out.append(LayerSpec("head", "conv", ch, 3, 3))
        out.append(LayerSpec("head.act", "sigmoid"))
        return out

    def parameter_shapes(self) -> dict[str, tuple]:
        shapes: dict[str, tuple] = {}
        for layer in self.layers():
            if layer.kind == "conv":
                shapes[f"{layer.name}.w"] = (layer.out_ch, layer.in_ch, layer.kernel, layer.kernel)
                shapes[f"{layer.name}.b"] = (layer.out_ch,)
            elif layer.kind == "deconv":
                shapes[f"{layer.name}.w"] = (layer.in_ch, layer.out_ch, layer.kernel, layer.kernel)
                shapes[f"{layer.name}.b"] = (layer.out_ch,)
            elif layer.kind == "batchnorm":
                shapes[f"{layer.name}.gamma"] = (layer.out_ch,)
                shapes[f"{layer.name}.beta"] = (layer.out_ch,)
        return shapes

    def buffer_shapes(self) -> dict[str, tuple]:
        shapes = {}
        for layer in self.layers():
            if layer.kind == "batchnorm":
                shapes[f"{layer.name}.running_mean"] = (layer.out_ch,)
                shapes[f"{layer.name}.running_var"] = (layer.out_ch,)
        return shapes


def xavier_bound(fan_in: int, fan_out: int) -> float:
    return math.sqrt(6.0 / (fan_in + fan_out))


def truncated_normal(rng: np.random.Generator, shape, std: float, bound: float = 2.0) -> np.ndarray:
    """Normal(0, std) samples redrawn until all lie within ``bound`` standard deviations."""
    z = rng.standard_normal(shape)
    bad = np.abs(z) > bound
    while bad.any():
        z[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(z) > bound
    return z * std


def build_network(spec: NetworkSpec | None = None, seed: int = 0, dtype=np.float32) -> "Network":
    """Randomly initialize a network for ``spec``; deterministic in ``seed``.

    Convolution and transposed-convolution weights are truncated normal with
    ``spec.init_std``; the head is Xavier-uniform; biases start at zero and
    batch norm at the identity.
    """
    spec = spec or NetworkSpec()
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    for name, shape in spec.parameter_shapes().items():
        if name == "head.w":
            out_ch, in_ch, k, _ = shape
            bound = xavier_bound(in_ch * k * k, out_ch * k * k)
            params[name] = rng.uniform(-bound, bound, size=shape)
        elif name.endswith(".w"):
            params[name] = truncated_normal(rng, shape, spec.init_std)
        elif name == "dec1.bn.gamma":
            params[name] = np.full(shape, spec.final_gamma)
        elif name.endswith(".gamma"):
            params[name] = np.ones(shape)
        else:
            params[name] = np.zeros(shape)
    buffers = {}
    for name, shape in spec.buffer_shapes().items():
        buffers[name] = np.ones(shape) if name.endswith("running_var") else np.zeros(shape)
    net = Network(spec, params, buffers)
    return net.astype(dtype)


def images_to_tensor(images) -> np.ndarray:
    """Stack ``(H, W, 3)`` images into an ``(N, 3, H, W)`` float32 tensor."""
    return np.ascontiguousarray(np.stack([np.asarray(im, dtype=np.float32) for im in images]).transpose(0, 3, 1, 2))


def tensor_to_images(t: np.ndarray) -> list[np.ndarray]:
    return [np.ascontiguousarray(a) for a in np.asarray(t).transpose(0, 2, 3, 1)]


@dataclass
class Network:
    spec: NetworkSpec
    params: dict
    buffers: dict
    _cache: list = field(default_factory=list, repr=False)

    def astype(self, dtype) -> "Network":
        return Network(
            self.spec,
            {k: np.asarray(v, dtype=dtype).copy() for k, v in self.params.items()},
            {k: np.asarray(v, dtype=dtype).copy() for k, v in self.buffers.items()},
        )

    def copy(self) -> "Network":
        return Network(self.spec, {k: v.copy() for k, v in self.params.items()},
                       {k: v.copy() for k, v in self.buffers.items()})

    @property
    def dtype(self):
        return self.params["head.w"].dtype

    def num_parameters(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    # -- forward -----------------------------------------------------------

    def forward(self, x: np.ndarray, mode: str = "eval") -> np.ndarray:
        """Run the network on an ``(N, 3, H, W)`` tensor; ``mode`` is "train" or "eval".

        Train mode normalizes with batch statistics, updates the running
        statistics, and keeps what :meth:`backward` needs.
        """
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        train = mode == "train"
        spec = self.spec
        if x.ndim != 4 or x.shape[1] != 3:
            raise ValueError(f"expected an (N, 3, H, W) tensor, got {x.shape}")
        d = spec.divisor
        if x.shape[2] % d or x.shape[3] % d:
            raise ValueError(f"spatial size {x.shape[2:]} must be divisible by {d}")
        p = self.params
        x = np.asarray(x, dtype=self.dtype)
        cache: list = []
        skips: dict[int, np.ndarray] = {}

        h = x
        for b, n_conv in enumerate(spec.encoder_convs, start=1):
            for j in range(1, n_conv + 1):
                name = f"enc{b}_{j}"
                z = F.conv2d_forward(h, p[f"{name}.w"], p[f"{name}.b"])
                a = F.activation_forward(z, "relu")
                cache.append(("conv", name, h))
                cache.append(("act", "relu", z, a))
                h = a
            skips[b] = h
            pooled, idx = F.maxpool_forward(h)
            cache.append(("pool", idx, h.shape))
            h = pooled

        h = self._conv_bn_act("bridge", h, train, cache)

        for b in range(spec.depth, 0, -1):
            up = F.deconv2d_forward(h, p[f"dec{b}.up.w"], p[f"dec{b}.up.b"], stride=2, padding=1)
            cache.append(("deconv", f"dec{b}.up", h))
            skip = skips[b]
            if up.shape[2:] != skip.shape[2:]:
                raise RuntimeError(f"shortcut dec{b} has mismatched spatial size {up.shape} vs {skip.shape}")
            cat = F.concat_depth(up, skip)
            cache.append(("concat", up.shape[1]))
            h = self._conv_bn_act(f"dec{b}", cat, train, cache, conv_name=f"dec{b}.conv")

        z = F.conv2d_forward(h, p["head.w"], p["head.b"])
        cache.append(("conv", "head", h))
        y = F.activation_forward(z, "sigmoid")
        cache.append(("act", "sigmoid", z, y))
        self._cache = cache if train else []
        self._skip_channels = {b: skips[b].shape[1] for b in skips}
        return y

    def _conv_bn_act(self, name, h, train, cache, conv_name=None):
        p, spec = self.params, self.spec
        conv_name = conv_name or name
        z = F.conv2d_forward(h, p[f"{conv_name}.w"], p[f"{conv_name}.b"])
        cache.append(("conv", conv_name, h))
        bn = f"{name}.bn"
        mean_buf = self.buffers[f"{bn}.running_mean"]
        var_buf = self.buffers[f"{bn}.running_var"]
        if not train:
            # never touch running statistics outside training
            mean_buf, var_buf = mean_buf.copy(), var_buf.copy()
        n, bn_cache = F.batchnorm_forward(z, p[f"{bn}.gamma"], p[f"{bn}.beta"], mean_buf, var_buf,
                                          train=train, momentum=spec.bn_momentum, eps=spec.bn_eps)
        cache.append(("bn", bn, bn_cache))
        a = F.activation_forward(n, "leaky_relu", spec.alpha)
        cache.append(("act", "leaky_relu", n, a))
        return a

    # -- backward ----------------------------------------------------------

    def backward(self, grad_out: np.ndarray):
        """Backpropagate ``dLoss/dOutput`` through the last train-mode forward.

        Returns ``(grads, grad_input)`` with ``grads`` keyed like :attr:`params`.
        """
        if not self._cache:
            raise RuntimeError("backward() requires a preceding forward(..., mode='train')")
        p = self.params
        grads = {k: np.zeros_like(v) for k, v in p.items()}
        skip_grads: dict[int, np.ndarray] = {}
        g = np.asarray(grad_out, dtype=self.dtype)
        depth = self.spec.depth
        # decoder levels were recorded deepest-first; walk the cache in reverse
        level_stack = list(range(1, depth + 1))
        pool_block = depth
        for entry in reversed(self._cache):
            kind = entry[0]
            if kind == "act":
                _, act, z, a = entry
                g = F.activation_backward(g, z, a, act, self.spec.alpha)
            elif kind == "bn":
                _, bn, bn_cache = entry
                g, dgamma, dbeta = F.batchnorm_backward(g, p[f"{bn}.gamma"], bn_cache)
                grads[f"{bn}.gamma"] += dgamma
                grads[f"{bn}.beta"] += dbeta
            elif kind == "conv":
                _, name, inp = entry
                g, dw, db = F.conv2d_backward(inp, p[f"{name}.w"], g)
                grads[f"{name}.w"] += dw
                grads[f"{name}.b"] += db
            elif kind == "concat":
                _, up_ch = entry
                level = level_stack.pop(0)
                g, g_skip = F.split_depth(g, up_ch)
                skip_grads[level] = g_skip
            elif kind == "deconv":
                _, name, inp = entry
                g, dw, db = F.deconv2d_backward(inp, p[f"{name}.w"], g, stride=2, padding=1)
                grads[f"{name}.w"] += dw
                grads[f"{name}.b"] += db
            elif kind == "pool":
                _, idx, shape = entry
                g = F.maxpool_backward(g, idx, shape) + skip_grads.pop(pool_block)
                pool_block -= 1
        return grads, g
