"""Flash artifact removal for close-range portraits.

A bilateral-filter split of the flash image into low and high frequencies, a
VGG-16 encoder-decoder trained on the low-frequency flash/ambient difference,
and the surrounding data, training and evaluation pipeline, all in numpy.
"""

from .bilateral import FilterParams, bilateral, bilateral_exact, bilateral_fast, choose_sigmas
from .encoding import EncodedSample, EncodingKind, encode, output_image, precondition_truth, reconstruct
from .image import BoundingBox, load_image, save_image
from .metrics import MetricsRecord, accuracy, loss_defined, loss_simplified, psnr, ssim

__version__ = "0.1.0"

__all__ = [
    "FilterParams", "bilateral", "bilateral_exact", "bilateral_fast", "choose_sigmas",
    "EncodedSample", "EncodingKind", "encode", "output_image", "precondition_truth", "reconstruct",
    "BoundingBox", "load_image", "save_image",
    "MetricsRecord", "accuracy", "loss_defined", "loss_simplified", "psnr", "ssim",
]
