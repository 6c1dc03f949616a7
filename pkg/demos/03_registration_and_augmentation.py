# coding: utf-8
# # Aligning a pair and multiplying it by twenty
#
# Flash and no-flash shots are taken a moment apart, so the head moves. An
# affine transform found by maximizing mutual information lines them up even
# though their brightness differs. Each aligned pair then becomes 20 training
# pairs: 5 rotations x (full frame, face crop) x (as is, mirrored).
#
# Run: python demos/03_registration_and_augmentation.py [out_dir]

# %%
import math
import sys
import time
from pathlib import Path

import numpy as np

from deflash.dataset import augment, synthesize_flash_pair, synthetic_portrait
from deflash.image import BoundingBox, save_image
from deflash.registration import AffineTransform, register_affine, warp_affine

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out") / "augment"
out.mkdir(parents=True, exist_ok=True)

flash, ambient = synthesize_flash_pair(synthetic_portrait(128, seed=11), artifact_seed=2)
moved = AffineTransform.from_params(math.radians(4), 0.02, -0.01, 0.0, 5.0, -3.0, center=(63.5, 63.5))
ambient_moved = warp_affine(ambient, moved)

# %%
t0 = time.perf_counter()
T = register_affine(ambient_moved, flash, seed=0)
print(f"registration took {time.perf_counter() - t0:.1f}s")
residual = T.compose(moved)  # should be close to the identity
pts = np.array([[0, 0], [127, 0], [0, 127], [127, 127]])
print("worst corner error after alignment: %.2f px" % np.abs(residual.apply(pts) - pts).max())
aligned = warp_affine(ambient_moved, T)

# %%
box = BoundingBox(28, 34, 72, 60)
pairs = augment((flash, aligned), bbox=box)
print(len(pairs), "augmented pairs")
for p in pairs[::3]:
    print(f"  {p['tag']:<12} rotation {p['rotation']:+5.0f}  crop {p['crop']:<4}  flip {p['flip']}")
for p in pairs:
    save_image(p["flash"], out / f"{p['tag']}_flash.png")
print("images in", out)
