"""Adam and SGD-with-momentum over a dict of named numpy parameters."""

from __future__ import annotations

import numpy as np

__all__ = ["NonFiniteGradientError", "Adam", "SGDMomentum"]


class NonFiniteGradientError(FloatingPointError):
    """A gradient contained NaN or inf; the step was not applied."""


def _validate(params: dict, grads: dict) -> None:
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {params[name].shape}")
    bad = [name for name, g in grads.items() if not np.all(np.isfinite(g))]
    if bad:
        raise NonFiniteGradientError(f"non-finite gradients in {', '.join(sorted(bad))}")


class Adam:
    """Adam with bias-corrected moments.

    Defaults follow the training setup: ``lr=1e-5``, ``beta1=0.9``,
    ``beta2=0.999``, ``eps=1e-8``. Moments are kept in the parameter dtype;
    the bias corrections are computed in float64.
    """

    kind = "adam"

    def __init__(self, lr: float = 1e-5, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr < 0:
            raise ValueError("learning rate must be non-negative")
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ValueError("betas must lie in [0, 1)")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict, grads: dict) -> None:
        """Update ``params`` in place from ``grads``."""
        _validate(params, grads)
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, g in grads.items():
            theta = params[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(theta)
                self.v[name] = np.zeros_like(theta)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            m_hat = m.astype(np.float64) / bc1
            v_hat = v.astype(np.float64) / bc2
            theta -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(theta.dtype)

    def state_dict(self) -> tuple[dict, dict]:
        scalars = {"kind": self.kind, "step": self.step_count, "lr": self.lr,
                   "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps}
        tensors = {f"m/{k}": v for k, v in self.m.items()}
        tensors.update({f"v/{k}": v for k, v in self.v.items()})
        return scalars, tensors

    def load_state_dict(self, scalars: dict, tensors: dict) -> None:
        if scalars.get("kind", self.kind) != self.kind:
            raise ValueError(f"optimizer state is for {scalars['kind']!r}, not {self.kind!r}")
        self.step_count = int(scalars["step"])
        for key in ("lr", "beta1", "beta2", "eps"):
            if key in scalars:
                setattr(self, key, float(scalars[key]))
        self.m = {k[2:]: v.copy() for k, v in tensors.items() if k.startswith("m/")}
        self.v = {k[2:]: v.copy() for k, v in tensors.items() if k.startswith("v/")}


class SGDMomentum:
    """``velocity = momentum * velocity - lr * g``; ``theta += velocity``."""

    kind = "sgdm"

    def __init__(self, lr: float = 1e-3, momentum: float = 0.9):
        if not 0.0 <= momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if lr < 0:
            raise ValueError("learning rate must be non-negative")
        self.lr = lr
        self.momentum = momentum
        self.step_count = 0
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, params: dict, grads: dict) -> None:
        _validate(params, grads)
        self.step_count += 1
        for name, theta in params.items():
            vel = self.velocity.get(name)
            if vel is None:
                vel = self.velocity[name] = np.zeros_like(theta)
            vel *= self.momentum
            g = grads.get(name)
            if g is not None:
                vel -= self.lr * g
            theta += vel

    def state_dict(self) -> tuple[dict, dict]:
        scalars = {"kind": self.kind, "step": self.step_count, "lr": self.lr, "momentum": self.momentum}
        return scalars, {f"velocity/{k}": v for k, v in self.velocity.items()}

    def load_state_dict(self, scalars: dict, tensors: dict) -> None:
        if scalars.get("kind", self.kind) != self.kind:
            raise ValueError(f"optimizer state is for {scalars['kind']!r}, not {self.kind!r}")
        self.step_count = int(scalars["step"])
        self.lr = float(scalars.get("lr", self.lr))
        self.momentum = float(scalars.get("momentum", self.momentum))
        self.velocity = {k.split("/", 1)[1]: v.copy() for k, v in tensors.items()}
