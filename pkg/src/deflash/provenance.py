"""Reference results reported for the full-scale model.

These are the published numbers for a 512x512 model trained for 62 epochs
(about 458,000 iterations) on 495 captured pairs augmented to 9,900. They
are reference fixtures printed next to local results, not targets.
"""

PUBLISHED_LOSS_ACCURACY = {
    "val": {"loss": 0.0042, "accuracy": 96.2},
    "test": {"loss": 0.0045, "accuracy": 96.5},
}

PUBLISHED_SSIM_PSNR = {
    "train": {"ssim": 0.9155, "psnr": 24.05},
    "val": {"ssim": 0.8776, "psnr": 20.42},
    "test": {"ssim": 0.8980, "psnr": 21.28},
}

TRAINING_RUN = {
    "epochs": 62,
    "iterations": 458_000,
    "input_size": 512,
    "batch_size": 4,
    "pairs": 495,
    "subjects": 101,
    "augmented_pairs": 9_900,
    "test_images": 740,
    "val_loss_images": 1_500,
}


def reference_row(split: str) -> dict:
    """Published metrics for ``split`` (any of train/val/test); missing values are None."""
    t1 = PUBLISHED_LOSS_ACCURACY.get(split, {})
    t2 = PUBLISHED_SSIM_PSNR.get(split, {})
    return {"loss": t1.get("loss"), "accuracy": t1.get("accuracy"), "ssim": t2.get("ssim"), "psnr": t2.get("psnr")}
