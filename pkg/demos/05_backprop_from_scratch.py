# coding: utf-8
# # The network, its gradients and the optimizer, in plain numpy
#
# Every layer has a hand-written backward pass. Here we check one full
# network's gradient against finite differences and run Adam on a toy problem.
#
# Run: python demos/05_backprop_from_scratch.py

# %%
import numpy as np

from deflash.nn import NetworkSpec, build_network
from deflash.optim import Adam, SGDMomentum

spec = NetworkSpec(width_multiplier=1 / 8)
net = build_network(spec, seed=0)
print("encoder widths", spec.widths, " parameters", net.num_parameters())
print("full-width parameters", sum(int(np.prod(s)) for s in NetworkSpec().parameter_shapes().values()))

# %% [markdown]
# A fresh network outputs exactly 0.5, which decodes to "leave the image alone".

# %%
x = np.random.default_rng(0).random((2, 3, 64, 64)).astype(np.float32)
print("fresh output range", net.forward(x).min(), net.forward(x).max())

# %% [markdown]
# Directional derivative check in float64 on a random point.

# %%
rng = np.random.default_rng(1)
net64 = build_network(NetworkSpec(width_multiplier=1 / 16, final_gamma=1.0), seed=1, dtype=np.float64)
for k in net64.params:
    if k.endswith(".b") or k.endswith(".beta"):
        net64.params[k] = 0.05 * rng.standard_normal(net64.params[k].shape)
x = rng.random((2, 3, 32, 32))
r = rng.standard_normal(x.shape)
work = net64.copy()
work.forward(x, "train")
grads, _ = work.backward(r)
v = {k: rng.standard_normal(p.shape) for k, p in net64.params.items()}
h = 1e-7
plus, minus = net64.copy(), net64.copy()
for k in v:
    plus.params[k] += h * v[k]
    minus.params[k] -= h * v[k]
numeric = (np.sum(plus.forward(x, "train") * r) - np.sum(minus.forward(x, "train") * r)) / (2 * h)
analytic = sum(np.sum(grads[k] * v[k]) for k in v)
print(f"analytic {analytic:.6f}  numeric {numeric:.6f}  rel err {abs(analytic - numeric) / abs(numeric):.1e}")

# %% [markdown]
# Adam versus momentum SGD on f(theta) = theta^2 from theta = 1.

# %%
for opt in (Adam(lr=0.1), SGDMomentum(lr=0.1, momentum=0.9)):
    p = {"theta": np.array([1.0])}
    trace = []
    for i in range(200):
        opt.step(p, {"theta": 2 * p["theta"]})
        if i % 40 == 39:
            trace.append(f"{p['theta'][0]:+.4f}")
    print(f"{type(opt).__name__:<12}", " ".join(trace))
