"""Training loop, inference and evaluation."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .bilateral import FilterParams, bilateral, choose_sigmas
from .dataset import ManifestEntry, load_manifest, resolve_path
from .encoding import EncodingKind, encode, output_image, precondition_truth
from .image import load_image, resize
from .metrics import MetricsRecord, accuracy, loss_backward, loss_simplified, psnr, ssim
from .nn import (Checkpoint, Network, NetworkSpec, build_network, images_to_tensor, load_checkpoint,
                 save_checkpoint, tensor_to_images)
from .optim import Adam

__all__ = ["TrainConfig", "TrainLog", "TrainResult", "TrainingDiverged", "FilterCache", "load_split",
           "train", "infer", "evaluate", "EvalReport", "compare_encodings", "CACHE_ENV"]

log = logging.getLogger(__name__)

CACHE_ENV = "DEFLASH_CACHE_DIR"


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 4
    input_size: int = 64
    width_multiplier: float = 0.125
    max_epochs: int = 10
    max_iterations: Optional[int] = None
    eval_every: int = 50
    seed: int = 0
    checkpoint_dir: Optional[str] = None
    target_loss: Optional[float] = None
    lr: float = 1e-5
    encoding: str = "C"
    bilateral_method: str = "auto"
    init_std: float = 0.1
    val_limit: Optional[int] = None
    encoder_weights: Optional[str] = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.input_size < 32 or self.input_size % 32:
            raise ValueError(f"input_size must be a positive multiple of 32, got {self.input_size}")
        if self.eval_every < 1:
            raise ValueError("eval_every must be at least 1")
        self.encoding = EncodingKind.parse(self.encoding).value

    @classmethod
    def from_file(cls, path, **overrides) -> "TrainConfig":
        """Read a JSON object of config keys; non-None ``overrides`` win."""
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise ValueError(f"{path}: config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"{path}: unknown config keys {sorted(unknown)}")
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**data)

    def network_spec(self) -> NetworkSpec:
        return NetworkSpec(width_multiplier=self.width_multiplier, init_std=self.init_std)


@dataclass
class TrainLog:
    records: list = field(default_factory=list)  # dicts: step, epoch, train_loss, val_loss, val_accuracy
    train_losses: list = field(default_factory=list)  # one per iteration

    def add(self, record: dict) -> None:
        if self.records and record["step"] <= self.records[-1]["step"]:
            raise ValueError("TrainLog steps must be strictly increasing")
        self.records.append(record)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)

    def smoothed_loss(self, iteration: int, window: int = 10) -> float:
        """Mean train loss over the ``window`` iterations ending at ``iteration`` (1-based)."""
        lo = max(0, iteration - window)
        return float(np.mean(self.train_losses[lo:iteration]))


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: TrainLog
    best_val_loss: float = math.inf
    best_path: Optional[str] = None


# ---------------------------------------------------------------------------
# Data
# ---------------------------------------------------------------------------

class FilterCache:
    """Bilateral-filtered images keyed by (source path, sigma_s, sigma_r, size, method).

    With a directory, results persist as ``.npy`` files across runs.
    """

    def __init__(self, directory=None, method: str = "auto"):
        self.directory = Path(directory) if directory else None
        self.method = method
        self._mem: dict[str, np.ndarray] = {}
        if self.directory:
            self.directory.mkdir(parents=True, exist_ok=True)

    def _key(self, source: str, params: FilterParams, shape) -> str:
        text = f"{os.path.abspath(source)}|{params.sigma_s!r}|{params.sigma_r!r}|{shape}|{self.method}"
        return hashlib.sha256(text.encode()).hexdigest()[:32]

    def filtered(self, source: str, img: np.ndarray, params: FilterParams) -> np.ndarray:
        key = self._key(source, params, img.shape)
        if key in self._mem:
            return self._mem[key]
        out = None
        if self.directory:
            f = self.directory / f"{key}.npy"
            if f.exists():
                out = np.load(f)
        if out is None:
            out = bilateral(img, params, method=self.method)
            if self.directory:
                np.save(self.directory / f"{key}.npy", out)
        self._mem[key] = out
        return out


@dataclass
class Sample:
    image_id: str
    raw_input: np.ndarray
    raw_truth: np.ndarray
    net_input: np.ndarray
    target: np.ndarray


def _load_pair(manifest_path, e: ManifestEntry, size: int):
    x = load_image(resolve_path(manifest_path, e.flash_path))
    o = load_image(resolve_path(manifest_path, e.ambient_path))
    if x.shape[:2] != (size, size):
        x = resize(x, size, size)
    if o.shape[:2] != (size, size):
        o = resize(o, size, size)
    return x, o


def load_split(manifest_path, split: str, size: int, kind="C", cache: FilterCache | None = None,
               entries: list | None = None) -> list[Sample]:
    """Load and encode every pair of ``split`` at ``size`` x ``size``."""
    entries = entries if entries is not None else load_manifest(manifest_path)
    cache = cache or FilterCache()
    kind = EncodingKind.parse(kind)
    out = []
    for e in entries:
        if e.split != split:
            continue
        x, o = _load_pair(manifest_path, e, size)
        filtered = None
        params = choose_sigmas(x)
        if kind is EncodingKind.C:
            filtered = (cache.filtered(resolve_path(manifest_path, e.flash_path), x, params),
                        cache.filtered(resolve_path(manifest_path, e.ambient_path), o, params))
        s = encode(x, o, params, kind, filtered=filtered)
        out.append(Sample(Path(e.flash_path).stem, x, o, s.net_input, s.target))
    return out


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def _validate_batches(net: Network, samples: list[Sample], kind: EncodingKind, batch: int = 8):
    losses, accs = [], []
    for i in range(0, len(samples), batch):
        chunk = samples[i:i + batch]
        X = images_to_tensor([s.net_input for s in chunk])
        T = images_to_tensor([s.target for s in chunk])
        Y = net.forward(X, "eval")
        losses.extend(loss_simplified(Y, T).per_image)
        for s, y in zip(chunk, tensor_to_images(Y)):
            y_d = output_image(kind, s.net_input, y, clamp=False)
            t_d = output_image(kind, s.net_input, s.target, clamp=False)
            accs.append(accuracy(t_d, y_d))
    return float(np.mean(losses)), float(np.mean(accs))


def train(config: TrainConfig, manifest_path, *, cache: FilterCache | None = None,
          train_samples: list | None = None, val_samples: list | None = None) -> TrainResult:
    """Train a network on the manifest's train split, validating on its val split.

    Minibatches are drawn from a seeded shuffle each epoch, with the remainder
    dropped. Every ``eval_every`` iterations (and at the end) the val loss and
    accuracy are logged and the best model is checkpointed. Training stops
    after ``max_epochs``, after ``max_iterations``, or once the val loss
    reaches ``target_loss``.
    """
    kind = EncodingKind.parse(config.encoding)
    if cache is None:
        cache = FilterCache(os.environ.get(CACHE_ENV), config.bilateral_method)
    entries = load_manifest(manifest_path) if (train_samples is None or val_samples is None) else None
    if train_samples is None:
        train_samples = load_split(manifest_path, "train", config.input_size, kind, cache, entries)
    if val_samples is None:
        val_samples = load_split(manifest_path, "val", config.input_size, kind, cache, entries)
    if config.val_limit:
        val_samples = val_samples[:config.val_limit]
    if len(train_samples) < config.batch_size:
        raise ValueError(f"train split has {len(train_samples)} pairs, fewer than one batch of {config.batch_size}")
    if not val_samples:
        raise ValueError("val split is empty")

    rng = np.random.default_rng(config.seed)
    net = build_network(config.network_spec(), seed=config.seed)
    if config.encoder_weights:
        from .nn import import_encoder_weights
        import_encoder_weights(net, config.encoder_weights)
    opt = Adam(lr=config.lr)
    train_log = TrainLog()
    ckpt_dir = Path(config.checkpoint_dir) if config.checkpoint_dir else None
    if ckpt_dir:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    meta = {"config": asdict(config), "encoding": kind.value, "input_size": config.input_size,
            "sigma_policy": "choose_sigmas"}

    def snapshot(step):
        return Checkpoint(net.copy(), step, opt.state_dict(), dict(meta))

    best_loss, best_path = math.inf, None
    last_good = snapshot(0)
    step = 0
    since_eval: list[float] = []
    n_batches = len(train_samples) // config.batch_size
    stop = False
    for epoch in range(config.max_epochs):
        order = rng.permutation(len(train_samples))
        for b in range(n_batches):
            idx = order[b * config.batch_size:(b + 1) * config.batch_size]
            X = images_to_tensor([train_samples[i].net_input for i in idx])
            T = images_to_tensor([train_samples[i].target for i in idx])
            Y = net.forward(X, "train")
            loss = loss_simplified(Y, T).value
            if not math.isfinite(loss):
                if ckpt_dir:
                    save_checkpoint(last_good, ckpt_dir / "last_good.ckpt")
                raise TrainingDiverged(f"non-finite loss at iteration {step + 1}")
            grads, _ = net.backward(loss_backward(Y, T))
            opt.step(net.params, grads)
            step += 1
            train_log.train_losses.append(loss)
            since_eval.append(loss)
            last_iter = config.max_iterations is not None and step >= config.max_iterations
            last_iter = last_iter or (epoch == config.max_epochs - 1 and b == n_batches - 1)
            if step % config.eval_every == 0 or last_iter:
                val_loss, val_acc = _validate_batches(net, val_samples, kind)
                train_log.add({"step": step, "epoch": epoch + 1, "train_loss": float(np.mean(since_eval)),
                               "val_loss": val_loss, "val_accuracy": val_acc})
                since_eval = []
                log.info("step %d  train %.5f  val %.5f  acc %.2f", step, train_log.records[-1]["train_loss"],
                         val_loss, val_acc)
                if math.isfinite(val_loss):
                    last_good = snapshot(step)
                if val_loss < best_loss:
                    best_loss = val_loss
                    if ckpt_dir:
                        best_path = str(ckpt_dir / "best.ckpt")
                        save_checkpoint(last_good, best_path)
                if config.target_loss is not None and val_loss <= config.target_loss:
                    stop = True
            if last_iter:
                stop = True
            if stop:
                break
        if stop:
            break

    final = snapshot(step)
    if ckpt_dir:
        save_checkpoint(final, ckpt_dir / "last.ckpt")
        (ckpt_dir / "train_log.jsonl").write_text(train_log.to_jsonl(), encoding="utf-8")
    return TrainResult(final, train_log, best_loss, best_path)


# ---------------------------------------------------------------------------
# Inference and evaluation
# ---------------------------------------------------------------------------

def _as_checkpoint(ckpt) -> Checkpoint:
    if isinstance(ckpt, Checkpoint):
        return ckpt
    return load_checkpoint(ckpt)


def _network_input(kind: EncodingKind, x: np.ndarray, method: str) -> np.ndarray:
    if kind is EncodingKind.C:
        return bilateral(x, choose_sigmas(x), method=method)
    return x


def predict(ckpt, net_inputs: list[np.ndarray], batch: int = 8) -> list[np.ndarray]:
    """Eval-mode network outputs for a list of same-sized network inputs."""
    ckpt = _as_checkpoint(ckpt)
    out = []
    for i in range(0, len(net_inputs), batch):
        out.extend(tensor_to_images(ckpt.network.forward(images_to_tensor(net_inputs[i:i + batch]), "eval")))
    return out


def infer(ckpt, flash: np.ndarray, *, clamp: bool = True, method: str = "auto") -> np.ndarray:
    """Remove flash artifacts from ``flash`` with a trained checkpoint.

    Sizes that are not multiples of 32 are resized for the network; the
    predicted difference is resized back and applied to the original input,
    so its full-resolution detail survives.
    """
    ckpt = _as_checkpoint(ckpt)
    kind = EncodingKind.parse(ckpt.meta.get("encoding", "C"))
    flash = np.asarray(flash, dtype=np.float32)
    h, w = flash.shape[:2]
    d = ckpt.network.spec.divisor
    nh, nw = max(d, int(round(h / d)) * d), max(d, int(round(w / d)) * d)
    x = flash if (nh, nw) == (h, w) else resize(flash, nh, nw)
    y = predict(ckpt, [_network_input(kind, x, method)])[0]
    if (nh, nw) != (h, w):
        y = resize(np.clip(y, 0.0, 1.0), h, w)
    return output_image(kind, flash, y, clamp=clamp)


@dataclass
class EvalReport:
    split: str
    records: list  # MetricsRecord per image
    mean: MetricsRecord
    baseline: MetricsRecord  # unprocessed flash input against the same reference

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in self.records)


def _mean_record(records, split, image_id="mean") -> MetricsRecord:
    return MetricsRecord(
        accuracy=float(np.mean([r.accuracy for r in records])),
        ssim=float(np.mean([r.ssim for r in records])),
        psnr=float(np.mean([r.psnr for r in records])),
        split=split, image_id=image_id,
    )


def _clip_accuracy(v: float) -> float:
    return min(100.0, max(0.0, v))


def evaluate(ckpt, manifest_path, split: str = "test", *, sample: Optional[int] = None, seed: int = 0,
             reference: str = "preconditioned", predictor: Callable | None = None,
             samples: list | None = None, method: str = "auto") -> EvalReport:
    """Per-image accuracy, SSIM and PSNR of reconstructions on ``split``.

    The reference is the preconditioned ground truth ``x - 2t + 1`` (or the
    raw ambient image with ``reference="ambient"``). Reconstructions are not
    clamped before scoring. ``sample`` draws a seeded random subset, e.g. 30.
    ``predictor`` replaces the network: it maps a list of network inputs to
    a list of outputs.
    """
    ckpt = _as_checkpoint(ckpt) if predictor is None or ckpt is not None else None
    kind = EncodingKind.parse(ckpt.meta.get("encoding", "C")) if ckpt is not None else EncodingKind.C
    size = int(ckpt.meta.get("input_size", 64)) if ckpt is not None else None
    if samples is None:
        entries = load_manifest(manifest_path)
        if size is None:
            first = next((e for e in entries if e.split == split), None)
            if first is None:
                raise ValueError(f"split {split!r} is empty")
            size = load_image(resolve_path(manifest_path, first.flash_path)).shape[0]
        samples = load_split(manifest_path, split, size, EncodingKind.C, FilterCache(method=method), entries)
    if not samples:
        raise ValueError(f"split {split!r} is empty")
    if sample is not None and sample < len(samples):
        pick = np.sort(np.random.default_rng(seed).choice(len(samples), size=sample, replace=False))
        samples = [samples[i] for i in pick]

    if kind is EncodingKind.C:
        net_inputs = [s.net_input for s in samples]
    else:
        net_inputs = [s.raw_input for s in samples]
    outputs = predictor(net_inputs) if predictor is not None else predict(ckpt, net_inputs)

    records, base = [], []
    for s, y in zip(samples, outputs):
        if reference == "preconditioned":
            ref = precondition_truth(s.raw_input, s.target)
        elif reference == "ambient":
            ref = s.raw_truth
        else:
            raise ValueError(f"unknown reference {reference!r}")
        pred = output_image(kind, s.raw_input, y, clamp=False)
        records.append(MetricsRecord(_clip_accuracy(accuracy(ref, pred)), ssim(pred, ref), psnr(pred, ref),
                                     split, s.image_id))
        base.append(MetricsRecord(_clip_accuracy(accuracy(ref, s.raw_input)), ssim(s.raw_input, ref),
                                  psnr(s.raw_input, ref), split, s.image_id))
    return EvalReport(split, records, _mean_record(records, split), _mean_record(base, split, "identity"))


def compare_encodings(manifest_path, config: TrainConfig, split: str = "val") -> list[dict]:
    """Train one short run per encoding with a shared seed and budget.

    Each run is scored against the raw ambient images of ``split``, the
    only reference the three encodings have in common.
    """
    rows = []
    cache = FilterCache(os.environ.get(CACHE_ENV), config.bilateral_method)
    entries = load_manifest(manifest_path)
    for kind in EncodingKind:
        cfg = TrainConfig(**{**asdict(config), "encoding": kind.value,
                             "checkpoint_dir": (os.path.join(config.checkpoint_dir, kind.value)
                                                if config.checkpoint_dir else None)})
        tr = load_split(manifest_path, "train", cfg.input_size, kind, cache, entries)
        va = load_split(manifest_path, "val", cfg.input_size, kind, cache, entries)
        result = train(cfg, manifest_path, cache=cache, train_samples=tr, val_samples=va)
        ev_samples = load_split(manifest_path, split, cfg.input_size, kind, cache, entries)
        ckpt = result.checkpoint
        net_inputs = [s.net_input for s in ev_samples]
        outputs = predict(ckpt, net_inputs)
        recs = []
        for s, y in zip(ev_samples, outputs):
            pred = output_image(kind, s.raw_input, y, clamp=True)
            recs.append(MetricsRecord(_clip_accuracy(accuracy(s.raw_truth, pred)), ssim(pred, s.raw_truth),
                                      psnr(pred, s.raw_truth), split, s.image_id))
        mean = _mean_record(recs, split)
        rows.append({"encoding": kind.value, "ssim": mean.ssim, "accuracy": mean.accuracy, "psnr": mean.psnr,
                     "final_train_loss": result.log.smoothed_loss(len(result.log.train_losses))})
    return rows
