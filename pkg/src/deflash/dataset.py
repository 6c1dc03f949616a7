"""Paired flash/ambient datasets: manifests, augmentation, preparation and synthetic pairs.

Manifest files hold one tab-separated record per line::

    flash_path <TAB> ambient_path <TAB> bbox <TAB> split <TAB> subject_id

``bbox`` is ``top,left,height,width`` or ``-``. Blank lines and lines
starting with ``#`` are ignored. Relative paths are resolved against the
manifest's directory.
"""

from __future__ import annotations

import itertools
import logging
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .image import BoundingBox, crop, load_image, resize, save_image
from .registration import AffineTransform, register_affine, warp_affine

__all__ = [
    "SPLITS", "ManifestEntry", "ManifestError", "load_manifest", "write_manifest", "resolve_path",
    "check_split_disjoint", "AugmentationPlan", "augment", "augmentation_count",
    "synthetic_portrait", "synthesize_flash_pair", "highlight_footprint", "split_counts", "synthesize_dataset", "prepare_dataset", "fallback_box",
]

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
FIELDS = ("flash_path", "ambient_path", "bbox", "split", "subject_id")


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    flash_path: str
    ambient_path: str
    bbox: Optional[BoundingBox] = None
    split: str = "train"
    subject_id: str = ""

    def to_line(self) -> str:
        box = "-" if self.bbox is None else f"{self.bbox.top},{self.bbox.left},{self.bbox.height},{self.bbox.width}"
        return "\t".join([self.flash_path, self.ambient_path, box, self.split, self.subject_id])


def _parse_bbox(text: str, lineno: int) -> Optional[BoundingBox]:
    if text == "-":
        return None
    try:
        t, l, h, w = (int(v) for v in text.split(","))
        return BoundingBox(t, l, h, w)
    except ValueError as exc:
        raise ManifestError(f"line {lineno}: invalid bbox {text!r} (expected top,left,height,width or -)") from exc


def load_manifest(path) -> list[ManifestEntry]:
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            for i, name in enumerate(FIELDS):
                if i >= len(parts) or parts[i].strip() == "":
                    raise ManifestError(f"line {lineno}: missing field '{name}'")
            if len(parts) > len(FIELDS):
                raise ManifestError(f"line {lineno}: expected {len(FIELDS)} fields, got {len(parts)}")
            flash, ambient, box, split, subject = (p.strip() for p in parts)
            if split not in SPLITS:
                raise ManifestError(f"line {lineno}: field 'split' must be one of {SPLITS}, got {split!r}")
            entries.append(ManifestEntry(flash, ambient, _parse_bbox(box, lineno), split, subject))
    return entries


def write_manifest(entries, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for e in entries:
            fh.write(e.to_line() + "\n")


def resolve_path(manifest_path, p: str) -> str:
    if os.path.isabs(p):
        return p
    return os.path.join(os.path.dirname(os.path.abspath(manifest_path)), p)


def check_split_disjoint(entries) -> None:
    """Raise if any subject appears in more than one split."""
    seen: dict[str, str] = {}
    for e in entries:
        prev = seen.setdefault(e.subject_id, e.split)
        if prev != e.split:
            raise ManifestError(f"subject {e.subject_id!r} appears in both {prev!r} and {e.split!r}")


# ---------------------------------------------------------------------------
# Augmentation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AugmentationPlan:
    rotations: tuple = (-20.0, -10.0, 0.0, 10.0, 20.0)
    crop_variants: tuple = ("full", "bbox")
    flips: tuple = (False, True)

    def combinations(self):
        """(rotation, crop, flip) triples in output order."""
        return list(itertools.product(self.rotations, self.crop_variants, self.flips))

    def __len__(self) -> int:
        return len(self.rotations) * len(self.crop_variants) * len(self.flips)


def augmentation_count(n_pairs: int, plan: AugmentationPlan | None = None) -> int:
    return n_pairs * len(plan or AugmentationPlan())


def fallback_box(h: int, w: int, fraction: float = 0.75) -> BoundingBox:
    """Centered square used when no face box is known."""
    side = max(1, int(round(fraction * min(h, w))))
    return BoundingBox((h - side) // 2, (w - side) // 2, side, side)


def _variant_tag(rot: float, crop_variant: str, flip: bool) -> str:
    r = int(round(rot))
    return f"{'m' if r < 0 else 'p'}{abs(r):02d}_{crop_variant}_{'h' if flip else 'n'}"


def augment(pair, plan: AugmentationPlan | None = None, bbox: BoundingBox | None = None) -> list[dict]:
    """Apply every (rotation, crop, flip) combination of ``plan`` to both images of ``pair``.

    Rotation is about the box center; the ``bbox`` variant crops to the box
    and rescales to the original size; flips are horizontal. Returns dicts
    with keys ``flash``, ``ambient``, ``rotation``, ``crop``, ``flip``, ``tag``.
    """
    plan = plan or AugmentationPlan()
    flash, ambient = (np.asarray(p, dtype=np.float32) for p in pair)
    if flash.shape != ambient.shape:
        raise ValueError(f"augment: pair shapes differ {flash.shape} vs {ambient.shape}")
    h, w = flash.shape[:2]
    box = bbox if bbox is not None else fallback_box(h, w)
    if not box.fits(h, w):
        raise ValueError(f"augment: {box} outside a {h}x{w} image")
    cy, cx = box.center
    out = []
    rotated = {}
    for rot in plan.rotations:
        if rot == 0:
            rotated[rot] = (flash, ambient)
        else:
            T = AffineTransform.rotation(rot, center=(cx, cy))
            rotated[rot] = (warp_affine(flash, T), warp_affine(ambient, T))
    for rot, variant, flip in plan.combinations():
        f, a = rotated[rot]
        if variant == "bbox":
            f, a = resize(crop(f, box), h, w), resize(crop(a, box), h, w)
        elif variant != "full":
            raise ValueError(f"unknown crop variant {variant!r}")
        if flip:
            f, a = f[:, ::-1], a[:, ::-1]
        out.append({"flash": np.ascontiguousarray(f), "ambient": np.ascontiguousarray(a),
                    "rotation": rot, "crop": variant, "flip": flip, "tag": _variant_tag(rot, variant, flip)})
    return out


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------

def _smooth_noise(rng, size: int, scale: float) -> np.ndarray:
    from scipy.ndimage import gaussian_filter
    n = gaussian_filter(rng.standard_normal((size, size)), scale, mode="wrap")
    return n / (np.abs(n).max() + 1e-12)


def synthetic_portrait(size: int, seed: int) -> np.ndarray:
    """A procedurally drawn head-and-shoulders image under even lighting."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / max(size - 1, 1)

    top = rng.uniform(0.3, 0.8, 3)
    bottom = rng.uniform(0.2, 0.7, 3)
    img = top * (1 - yy[..., None]) + bottom * yy[..., None]

    def soft(mask_dist, width=0.015):
        return np.clip(0.5 - mask_dist / width, 0.0, 1.0)

    # shoulders
    shirt = rng.uniform(0.1, 0.8, 3)
    sd = (yy - 0.85) ** 2 / 0.06 + (xx - 0.5) ** 2 / 0.2 - 1.0
    img = img * (1 - soft(sd, 0.3)[..., None]) + shirt * soft(sd, 0.3)[..., None]

    skin = np.array([rng.uniform(0.55, 0.9), rng.uniform(0.4, 0.7), rng.uniform(0.3, 0.55)])
    fx, fy = 0.5 + rng.uniform(-0.05, 0.05), 0.48 + rng.uniform(-0.04, 0.04)
    rx, ry = rng.uniform(0.2, 0.26), rng.uniform(0.27, 0.33)
    fd = ((xx - fx) / rx) ** 2 + ((yy - fy) / ry) ** 2 - 1.0
    shade = 1.0 - 0.15 * np.clip(((xx - fx) / rx) ** 2 + ((yy - fy) / ry) ** 2, 0, 1)
    face = soft(fd, 0.1)[..., None]
    img = img * (1 - face) + (skin * shade[..., None]) * face

    hair = rng.uniform(0.05, 0.45, 3)
    hd = ((xx - fx) / (rx * 1.1)) ** 2 + ((yy - fy + 0.12) / (ry * 0.9)) ** 2 - 1.0
    hair_mask = soft(hd, 0.1) * (yy < fy - 0.12 + 0.05 * np.cos((xx - fx) * 12))
    img = img * (1 - hair_mask[..., None]) + hair * hair_mask[..., None]

    for side in (-1, 1):
        ex, ey = fx + side * rx * 0.4, fy - ry * 0.1
        ed = ((xx - ex) / 0.045) ** 2 + ((yy - ey) / 0.022) ** 2 - 1.0
        em = soft(ed, 0.2)[..., None]
        img = img * (1 - em) + np.array([0.95, 0.95, 0.95]) * em
        pd = ((xx - ex) / 0.018) ** 2 + ((yy - ey) / 0.018) ** 2 - 1.0
        pm = soft(pd, 0.3)[..., None]
        img = img * (1 - pm) + rng.uniform(0.05, 0.3, 3) * pm
    md = ((xx - fx) / 0.08) ** 2 + ((yy - fy - ry * 0.55) / 0.02) ** 2 - 1.0
    mm = soft(md, 0.3)[..., None]
    img = img * (1 - mm) + np.array([0.6, 0.25, 0.25]) * mm

    # fine texture (pores, fabric, hair strands): the high frequencies
    tex = 0.04 * _smooth_noise(rng, size, 0.6)[..., None] + 0.03 * _smooth_noise(rng, size, 2.0)[..., None]
    img = img + tex * rng.uniform(0.7, 1.3, 3)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def _draw_artifacts(h: int, w: int, artifact_seed: int) -> dict:
    rng = np.random.default_rng(artifact_seed)
    return {
        "gain": rng.uniform(0.05, 0.2),
        "border": int(rng.integers(4)),
        "depth": rng.uniform(0.10, 0.30),
        "band": rng.uniform(0.08, 0.15),
        "cy": rng.uniform(0.35, 0.65) * (h - 1),
        "cx": rng.uniform(0.35, 0.65) * (w - 1),
        "sigma": rng.uniform(0.05, 0.15) * w,
        "peak": rng.uniform(0.2, 0.5),
    }


def synthesize_flash_pair(base: np.ndarray, artifact_seed: int):
    """Return ``(flash, ambient)`` where ``ambient`` is ``base`` and ``flash`` adds flash artifacts.

    Artifacts: a radial brightness gain toward the center (up to +20%), a
    soft shadow band along one border (10-30% darker), and an additive
    Gaussian specular highlight (sigma 5-15% of the width, peak 0.2-0.5)
    centered in the middle of the frame. Deterministic in ``artifact_seed``.
    """
    base = np.asarray(base, dtype=np.float32)
    h, w = base.shape[:2]
    a = _draw_artifacts(h, w, artifact_seed)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    ny, nx = yy / max(h - 1, 1), xx / max(w - 1, 1)

    r2 = ((ny - 0.5) ** 2 + (nx - 0.5) ** 2) / 0.5
    gain = 1.0 + a["gain"] * np.clip(1.0 - r2, 0.0, 1.0)

    dist = (nx, 1.0 - nx, ny, 1.0 - ny)[a["border"]]
    s = np.clip(1.0 - dist / a["band"], 0.0, 1.0)
    shadow = 1.0 - a["depth"] * s * s * (3 - 2 * s)

    highlight = a["peak"] * np.exp(-((yy - a["cy"]) ** 2 + (xx - a["cx"]) ** 2) / (2 * a["sigma"] ** 2))

    flash = base.astype(np.float64) * (gain * shadow)[..., None] + highlight[..., None]
    flash = np.clip(flash, 0.0, 1.0).astype(np.float32)
    return flash, base.copy()


def highlight_footprint(shape, artifact_seed: int) -> np.ndarray:
    """Boolean mask of the one-sigma disk of the highlight drawn for ``artifact_seed``."""
    h, w = shape[:2]
    a = _draw_artifacts(h, w, artifact_seed)
    yy, xx = np.mgrid[0:h, 0:w]
    return (yy - a["cy"]) ** 2 + (xx - a["cx"]) ** 2 <= a["sigma"] ** 2


def split_counts(count: int) -> tuple[int, int, int]:
    """70/15/15 split: ``floor(0.7n)`` train, ``floor(0.15n)`` val, remainder test."""
    n_train = int(math.floor(0.7 * count))
    n_val = int(math.floor(0.15 * count))
    return n_train, n_val, count - n_train - n_val


def synthesize_dataset(count: int, size: int, seed: int, out_dir) -> Path:
    """Write ``count`` synthetic pairs under ``out_dir`` and return the manifest path."""
    if count < 1:
        raise ValueError("count must be at least 1")
    out = Path(out_dir)
    (out / "flash").mkdir(parents=True, exist_ok=True)
    (out / "ambient").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    seeds = rng.integers(0, 2 ** 31 - 1, size=(count, 2))
    n_train, n_val, _ = split_counts(count)
    entries = []
    for i in range(count):
        base = synthetic_portrait(size, int(seeds[i, 0]))
        flash, ambient = synthesize_flash_pair(base, int(seeds[i, 1]))
        name = f"synth{i:05d}.png"
        save_image(flash, out / "flash" / name)
        save_image(ambient, out / "ambient" / name)
        split = "train" if i < n_train else "val" if i < n_train + n_val else "test"
        entries.append(ManifestEntry(f"flash/{name}", f"ambient/{name}", None, split, f"synth{i:05d}"))
    manifest = out / "manifest.tsv"
    write_manifest(entries, manifest)
    return manifest


# ---------------------------------------------------------------------------
# Preparation of captured pairs
# ---------------------------------------------------------------------------

def _context_square(box: BoundingBox, h: int, w: int, margin: float) -> BoundingBox:
    side = int(round(max(box.height, box.width) * (1 + 2 * margin)))
    side = max(1, min(side, h, w))
    cy, cx = box.center
    top = int(round(cy - (side - 1) / 2))
    left = int(round(cx - (side - 1) / 2))
    top = min(max(top, 0), h - side)
    left = min(max(left, 0), w - side)
    return BoundingBox(top, left, side, side)


@dataclass
class PrepareReport:
    entries: list = field(default_factory=list)
    failures: list = field(default_factory=list)


def prepare_dataset(manifest_path, out_dir, *, size: int = 512, align: bool = True, augment_pairs: bool = True,
                    plan: AugmentationPlan | None = None, seed: int = 0, margin: float = 0.25,
                    register_iterations: int = 500) -> PrepareReport:
    """Align, crop, resize and augment every pair of a raw manifest.

    The ambient image is registered onto the flash image. The face box (or a
    centered square) is widened by ``margin`` on each side to a square crop,
    resized to ``size``, and, with ``augment_pairs``, expanded 20-fold.
    Entries that fail are logged and skipped. Writes ``manifest.tsv`` in
    ``out_dir``.
    """
    plan = plan or AugmentationPlan()
    out = Path(out_dir)
    (out / "flash").mkdir(parents=True, exist_ok=True)
    (out / "ambient").mkdir(parents=True, exist_ok=True)
    entries = load_manifest(manifest_path)
    check_split_disjoint(entries)
    report = PrepareReport()
    for idx, e in enumerate(entries):
        try:
            flash = load_image(resolve_path(manifest_path, e.flash_path))
            ambient = load_image(resolve_path(manifest_path, e.ambient_path))
            if flash.shape != ambient.shape:
                raise ValueError(f"flash {flash.shape} and ambient {ambient.shape} differ in size")
            if align:
                T = register_affine(ambient, flash, register_iterations, seed=seed + idx)
                ambient = warp_affine(ambient, T)
            h, w = flash.shape[:2]
            face = e.bbox if e.bbox is not None else fallback_box(h, w)
            if not face.fits(h, w):
                raise ValueError(f"{face} lies outside the {h}x{w} image")
            region = _context_square(face, h, w, margin)
            scale = size / region.height
            flash = resize(crop(flash, region), size, size)
            ambient = resize(crop(ambient, region), size, size)
            local = BoundingBox(
                max(0, int(round((face.top - region.top) * scale))),
                max(0, int(round((face.left - region.left) * scale))),
                max(1, int(round(face.height * scale))),
                max(1, int(round(face.width * scale))),
            )
            local = replace(local, height=min(local.height, size - local.top), width=min(local.width, size - local.left))
            subject = e.subject_id or f"pair{idx}"
            stem = f"{subject}_{idx:04d}"
            if augment_pairs:
                variants = augment((flash, ambient), plan, local)
            else:
                variants = [{"flash": flash, "ambient": ambient, "tag": "p00_full_n"}]
            for v in variants:
                name = f"{stem}_{v['tag']}.png"
                save_image(v["flash"], out / "flash" / name)
                save_image(v["ambient"], out / "ambient" / name)
                box = None if augment_pairs else local
                report.entries.append(ManifestEntry(f"flash/{name}", f"ambient/{name}", box, e.split, subject))
        except Exception as exc:  # report and carry on with the remaining pairs
            log.error("entry %d (%s): %s", idx, e.flash_path, exc)
            report.failures.append((idx, e.flash_path, str(exc)))
    write_manifest(report.entries, out / "manifest.tsv")
    return report
