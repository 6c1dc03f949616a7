# coding: utf-8
# # What the network is asked to predict
#
# Encoding C: the network sees the filtered flash image BL(x) and predicts
# t = (BL(x) - BL(o) + 1) / 2, the low-frequency difference squeezed into
# [0, 1]. The corrected image is x - 2y + 1, so the flash image's own detail
# layer is carried through untouched.
#
# Run: python demos/02_encoding_and_metrics.py

# %%
import numpy as np

from deflash.dataset import synthesize_flash_pair, synthetic_portrait
from deflash.encoding import EncodingKind, encode, precondition_truth, reconstruct
from deflash.metrics import accuracy, loss_defined, loss_simplified, psnr, ssim

base = synthetic_portrait(64, seed=1)
x, o = synthesize_flash_pair(base, artifact_seed=5)
s = encode(x, o)
print("target range %.3f..%.3f, mean %.3f" % (s.target.min(), s.target.max(), s.target.mean()))

# %% [markdown]
# The best possible output for a perfect prediction is the "preconditioned"
# truth. It differs from the ambient photo only where the filter could not
# separate detail from lighting.

# %%
ref = precondition_truth(x, s.target)
print("preconditioned truth vs ambient:  SSIM %.4f  PSNR %.2f dB" % (ssim(ref, o), psnr(ref, o)))
print("flash input vs preconditioned:    SSIM %.4f  PSNR %.2f dB  accuracy %.2f" %
      (ssim(x, ref), psnr(x, ref), accuracy(ref, x)))

# %% [markdown]
# Predicting 0.5 everywhere means "change nothing".

# %%
print("y = 0.5 reproduces x:", np.abs(reconstruct(x, np.full_like(x, 0.5)) - x).max() < 1e-6)

# %% [markdown]
# The loss compares mean-free reconstructions. Written on (y, t) directly it
# needs no reconstruction at all; both forms agree.

# %%
rng = np.random.default_rng(0)
to_t = lambda a: a.transpose(2, 0, 1)[None].astype(np.float64)
y = np.clip(s.target + 0.02 * rng.standard_normal(s.target.shape), 0, 1)
a = loss_defined(to_t(reconstruct(x, y, clamp=False)), to_t(ref)).value
b = loss_simplified(to_t(y), to_t(s.target)).value
print(f"loss on reconstructions {a:.6f}   loss on (y, t) {b:.6f}")
print("constant offsets do not matter:", abs(loss_simplified(to_t(y) + 0.1, to_t(s.target)).value - b) < 1e-12)

# %%
for kind in EncodingKind:
    e = encode(x, o, kind=kind)
    print(kind.value, "input mean %.3f  target mean %.3f" % (e.net_input.mean(), e.target.mean()))
