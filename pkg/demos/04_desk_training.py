# coding: utf-8
# # Training at desk scale
#
# 200 synthetic pairs at 64x64, an eighth of the VGG widths, 300 Adam steps.
# Takes about two minutes on one CPU core. The published full-size model
# trained for days on a GPU; its numbers are printed alongside for scale, not
# as a target.
#
# Run: python demos/04_desk_training.py [out_dir]

# %%
import sys
import time
from pathlib import Path

from deflash import provenance
from deflash.dataset import synthesize_dataset
from deflash.image import save_image
from deflash.trainer import TrainConfig, evaluate, infer, load_split, train

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out") / "desk"
manifest = synthesize_dataset(200, 64, seed=0, out_dir=out / "data")

# %%
config = TrainConfig(batch_size=4, input_size=64, width_multiplier=1 / 8, lr=1e-4, max_iterations=300,
                     max_epochs=1000, eval_every=50, seed=0, checkpoint_dir=str(out / "run"))
t0 = time.perf_counter()
result = train(config, manifest)
print(f"trained in {time.perf_counter() - t0:.0f}s")
print("step  train_loss  val_loss  val_acc")
for r in result.log.records:
    print(f"{r['step']:4d}  {r['train_loss']:.5f}     {r['val_loss']:.5f}   {r['val_accuracy']:.2f}")

# %%
report = evaluate(out / "run" / "last.ckpt", manifest, "test")
ref = provenance.reference_row("test")
print("\n          model   no-op input   published (512px)")
print(f"SSIM     {report.mean.ssim:.4f}  {report.baseline.ssim:.4f}        {ref['ssim']}")
print(f"PSNR     {report.mean.psnr:6.2f}  {report.baseline.psnr:6.2f}        {ref['psnr']}")

# %%
sample = load_split(manifest, "test", 64)[0]
save_image(sample.raw_input, out / "test_flash.png")
save_image(infer(out / "run" / "last.ckpt", sample.raw_input), out / "test_output.png")
save_image(sample.raw_truth, out / "test_ambient.png")
print("example images in", out)
