"""Command-line entry point: ``deflash <command> [flags]``.

Commands: synth, prepare, train, infer, evaluate, compare-encodings, filter.
Failures exit nonzero and print ``error: <category>: <message>`` to stderr.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import provenance
from .bilateral import FilterParams, bilateral, choose_sigmas
from .dataset import ManifestError, prepare_dataset, synthesize_dataset
from .image import ImageFormatError, load_image, save_image
from .nn import CheckpointError
from .trainer import TrainConfig, compare_encodings, evaluate, infer, train

log = logging.getLogger("deflash")

# category -> exit status; argparse itself exits with 2 on usage errors
EXIT_CODES = {"io": 3, "format": 4, "invalid": 5, "diverged": 6}


def _category(exc: BaseException) -> str:
    if isinstance(exc, FloatingPointError):  # includes non-finite loss and gradients
        return "diverged"
    if isinstance(exc, (ImageFormatError, ManifestError, CheckpointError)):
        return "format"
    if isinstance(exc, OSError):
        return "io"
    return "invalid"


def _fmt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def _tsv(rows) -> str:
    return "".join("\t".join(_fmt(v) for v in row) + "\n" for row in rows)


# -- commands ----------------------------------------------------------------

def cmd_synth(args) -> int:
    manifest = synthesize_dataset(args.count, args.size, args.seed, args.out)
    print(manifest)
    return 0


def cmd_prepare(args) -> int:
    report = prepare_dataset(args.manifest, args.out, size=args.size, align=args.align, augment_pairs=args.augment,
                             seed=args.seed, register_iterations=args.iterations)
    print(f"{len(report.entries)} pairs written to {Path(args.out) / 'manifest.tsv'}; {len(report.failures)} failed")
    for idx, path, msg in report.failures:
        print(f"failed\t{idx}\t{path}\t{msg}", file=sys.stderr)
    return 0 if report.entries or not report.failures else EXIT_CODES["io"]


def _train_config(args, **extra) -> TrainConfig:
    overrides = {
        "seed": args.seed, "input_size": args.size, "width_multiplier": args.width_mult, "batch_size": args.batch,
        "lr": args.lr, "max_epochs": args.epochs, "max_iterations": args.iterations, "target_loss": args.target_loss,
        "encoding": args.encoding, "eval_every": args.eval_every, **extra,
    }
    if args.config:
        return TrainConfig.from_file(args.config, **overrides)
    return TrainConfig(**{k: v for k, v in overrides.items() if v is not None})


def cmd_train(args) -> int:
    config = _train_config(args, checkpoint_dir=args.out)
    result = train(config, args.manifest)
    rows = [("step", "train_loss", "val_loss", "val_accuracy")]
    rows += [(r["step"], r["train_loss"], r["val_loss"], r["val_accuracy"]) for r in result.log.records]
    sys.stdout.write(_tsv(rows))
    ref = provenance.PUBLISHED_LOSS_ACCURACY["val"]
    print(f"# reference val loss {ref['loss']} accuracy {ref['accuracy']} "
          f"after {provenance.TRAINING_RUN['epochs']} epochs at {provenance.TRAINING_RUN['input_size']}px")
    return 0


def cmd_infer(args) -> int:
    out = infer(args.checkpoint, load_image(args.input), clamp=True)
    save_image(out, args.out)
    print(args.out)
    return 0


def cmd_evaluate(args) -> int:
    report = evaluate(args.checkpoint, args.manifest, args.split, sample=30 if args.sample_30 else None,
                      seed=args.seed, reference=args.reference)
    if args.per_image:
        Path(args.per_image).write_text(report.to_jsonl(), encoding="utf-8")
    ref = provenance.reference_row(args.split)
    rows = [("metric", "model", "identity", "reference")]
    rows.append(("ssim", report.mean.ssim, report.baseline.ssim, ref["ssim"]))
    rows.append(("psnr", report.mean.psnr, report.baseline.psnr, ref["psnr"]))
    rows.append(("accuracy", report.mean.accuracy, report.baseline.accuracy, None))
    print(f"# split {args.split}, {len(report.records)} images, reference = published full-scale result")
    sys.stdout.write(_tsv(rows))
    return 0


def cmd_compare_encodings(args) -> int:
    rows = compare_encodings(args.manifest, _train_config(args, checkpoint_dir=args.out), split=args.split)
    table = [("encoding", "ssim", "accuracy", "psnr", "final_train_loss")]
    table += [(r["encoding"], r["ssim"], r["accuracy"], r["psnr"], r["final_train_loss"]) for r in rows]
    sys.stdout.write(_tsv(table))
    return 0


def cmd_filter(args) -> int:
    img = load_image(args.input)
    params = choose_sigmas(img)
    params = FilterParams(args.sigma_s if args.sigma_s is not None else params.sigma_s,
                          args.sigma_r if args.sigma_r is not None else params.sigma_r)
    out = bilateral(img, params, method="exact" if args.exact else "fast")
    save_image(out, args.out)
    print(f"{args.out}\tsigma_s={params.sigma_s:g}\tsigma_r={params.sigma_r:g}")
    return 0


# -- parser ------------------------------------------------------------------

def _add_train_flags(p):
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", help="JSON file of TrainConfig keys; flags override it")
    p.add_argument("--out", help="checkpoint directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--size", type=int, help="network input size (multiple of 32)")
    p.add_argument("--width-mult", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--eval-every", type=int)
    p.add_argument("--target-loss", type=float)
    p.add_argument("--encoding", choices=["A", "B", "C"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deflash", description="Flash artifact removal for portraits.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic flash/ambient pairs")
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prepare", help="align, crop and augment captured pairs")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, default=512)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--iterations", type=int, default=500, help="registration budget per pyramid level")
    p.add_argument("--align", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--augment", action=argparse.BooleanOptionalAction, default=True)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train a network")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="remove flash artifacts from one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("evaluate", help="accuracy, SSIM and PSNR on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--sample-30", action="store_true", help="score a seeded random subset of 30 images")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--reference", default="preconditioned", choices=["preconditioned", "ambient"])
    p.add_argument("--per-image", help="write per-image records as JSON lines")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare-encodings", help="short runs of encodings A, B and C")
    _add_train_flags(p)
    p.add_argument("--split", default="val", choices=["train", "val", "test"])
    p.set_defaults(func=cmd_compare_encodings)

    p = sub.add_parser("filter", help="bilateral-filter an image")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sigma-s", type=float)
    p.add_argument("--sigma-r", type=float)
    p.add_argument("--exact", action="store_true", help="brute-force filter instead of the bilateral grid")
    p.set_defaults(func=cmd_filter)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError, FloatingPointError, MemoryError) as exc:
        cat = _category(exc)
        print(f"error: {cat}: {exc}", file=sys.stderr)
        return EXIT_CODES[cat]


if __name__ == "__main__":
    sys.exit(main())
