"""Command-line entry point.

Subcommands: synth (render a dataset), train, eval (five-metric CSV),
robustness (baseline-vs-robust report), classic (statistics estimators),
augment (single-image adversarial curve). Exit codes: 0 on success, 1 on
runtime failure, 2 on usage or configuration errors. When --seed is not
given, the LUMACURVE_SEED environment variable (default 0) applies.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

SEED_ENV_VAR = "LUMACURVE_SEED"


def _resolve_seed(value: int | None) -> int:
    if value is not None:
        return value
    raw = os.environ.get(SEED_ENV_VAR)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError as exc:
        from .trainer import ConfigError

        raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {raw!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lumacurve",
        description="Brightness-robustness toolkit for illuminant estimation.",
    )
    parser.add_argument("--workers", type=int, default=None,
                        help="cap BLAS worker threads for this invocation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a synthetic dataset")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--scenes", type=int, default=20)
    p.add_argument("--illuminants", type=int, default=5)
    p.add_argument("--positions", type=int, default=8)
    p.add_argument("--res", type=int, default=64)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="train the toy estimator")
    p.add_argument("--data", required=True, help="dataset directory or manifest path")
    p.add_argument("--out", required=True, help="checkpoint path or stem")
    p.add_argument("--config", default=None, help="JSON file of training-config fields")
    p.add_argument("--bre", choices=["on", "off"], default=None,
                   help="enable/disable brightness-robust training")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--with-clean-loss", action="store_true",
                   help="add a clean-batch angular term to the joint loss")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--report", required=True, help="output CSV path")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("robustness", help="compare checkpoints on the position split")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", action="append", required=True,
                   help="checkpoint path (repeat for each model)")
    p.add_argument("--report", required=True, help="output CSV path (JSON/TSV siblings)")
    p.set_defaults(fn=cmd_robustness)

    p = sub.add_parser("classic", help="run a statistics-based estimator")
    p.add_argument("--image", required=True, help="input PFM image")
    p.add_argument("--method", required=True,
                   choices=["gray-world", "white-patch", "shades-of-gray", "gray-edge"])
    p.add_argument("--p", type=float, default=6.0, help="Minkowski order (inf allowed)")
    p.add_argument("--sigma", type=float, default=2.0, help="Gaussian scale for gray-edge")
    p.set_defaults(fn=cmd_classic)

    p = sub.add_parser("augment", help="adversarial brightness curve for one image")
    p.add_argument("--image", required=True, help="input PFM image")
    p.add_argument("--ckpt", required=True, help="model checkpoint")
    p.add_argument("--out", required=True, help="output PFM for the adversarial image")
    p.add_argument("--curve-out", required=True, help="output JSON for the curve weights")
    p.add_argument("--label", default=None,
                   help="reference illuminant 'r,g,b' (default: gray-world estimate)")
    p.set_defaults(fn=cmd_augment)
    return parser


def cmd_synth(args) -> int:
    from .synth import generate_dataset

    seed = _resolve_seed(args.seed)
    manifest = generate_dataset(
        args.out, seed=seed, n_scenes=args.scenes,
        n_illuminants=args.illuminants, n_positions=args.positions,
        resolution=args.res,
    )
    n_train = len(manifest.split("train"))
    n_test = len(manifest.split("test"))
    print(f"wrote {len(manifest.records)} images ({n_train} train / {n_test} test) "
          f"to {args.out}")
    return 0


def cmd_train(args) -> int:
    from .trainer import ConfigError, TrainConfig, train

    payload: dict = {}
    if args.config is not None:
        try:
            raw = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {args.config} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"config file {args.config} must hold a JSON object")
        payload.update(raw)
    if args.bre is not None:
        payload["bre_enabled"] = args.bre == "on"
    if args.epochs is not None:
        payload["epochs"] = args.epochs
    if args.batch_size is not None:
        payload["batch_size"] = args.batch_size
    if args.with_clean_loss:
        payload["with_clean_loss"] = True
    payload["seed"] = _resolve_seed(args.seed if args.seed is not None
                                    else payload.get("seed"))
    cfg = TrainConfig.from_dict(payload)

    result = train(_manifest_path(args.data), cfg, args.out, verbose=not args.quiet)
    print(f"final checkpoint: {result.final_ckpt}")
    print(f"best checkpoint:  {result.best_ckpt} (epoch {result.best_epoch})")
    print(f"metric log:       {result.log_path}")
    print(f"final test mean angular error: {result.final_test_mean:.4f} deg")
    return 0


def cmd_eval(args) -> int:
    from .evaluation import METRIC_FIELDS, split_errors, summary_stats
    from .model import load_checkpoint
    from .synth import load_manifest

    weights, _ = load_checkpoint(args.ckpt)
    manifest = load_manifest(_manifest_path(args.data))
    splits = [s for s in ("train", "test") if manifest.split(s)]
    if not splits:
        raise ValueError(f"manifest {args.data} has no train/test records")
    with open(args.report, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "split", *METRIC_FIELDS])
        for split in splits:
            stats = summary_stats(split_errors(manifest, split, weights)).as_dict()
            writer.writerow([Path(args.ckpt).stem, split,
                             *[f"{stats[f]:.6f}" for f in METRIC_FIELDS]])
            print(f"{split}: " + ", ".join(f"{f}={stats[f]:.4f}" for f in METRIC_FIELDS))
    print(f"wrote {args.report}")
    return 0


def cmd_robustness(args) -> int:
    from .evaluation import (metric_log_path, report_to_csv, report_to_json,
                             robustness_report, write_smoothed_curve)

    ckpts = {Path(c).stem if Path(c).suffix == ".json" else Path(c).name: c
             for c in args.ckpt}
    if len(ckpts) != len(args.ckpt):
        raise ValueError("checkpoint labels collide; use distinct file stems")
    report = robustness_report(ckpts, _manifest_path(args.data))
    csv_path = Path(args.report)
    report_to_csv(report, csv_path)
    report_to_json(report, csv_path.with_suffix(".json"))
    for label, ckpt in ckpts.items():
        log = metric_log_path(ckpt)
        if log.exists():
            for split in ("train", "test"):
                write_smoothed_curve(
                    log, csv_path.with_name(f"{csv_path.stem}_{label}_{split}.tsv"), split)
    for label, entry in report["models"].items():
        increase = entry.get("smoothed", {}).get("error_increase_pct",
                                                 entry["error_increase_pct"])
        print(f"{label}: test mean {entry['test']['mean']:.4f} deg, "
              f"error increase {increase:.2f}%")
    print(f"wrote {csv_path} and {csv_path.with_suffix('.json')}")
    return 0


def cmd_classic(args) -> int:
    from .classic import gray_edge, gray_world, shades_of_gray, white_patch
    from .color_core import load_pfm

    img = load_pfm(args.image)
    p = math.inf if str(args.p).lower() in ("inf", "infinity") else args.p
    if args.method == "gray-world":
        est = gray_world(img)
    elif args.method == "white-patch":
        est = white_patch(img)
    elif args.method == "shades-of-gray":
        est = shades_of_gray(img, p)
    else:
        est = gray_edge(img, p, args.sigma)
    print(" ".join(f"{v:.6f}" for v in est.rgb))
    return 0


def cmd_augment(args) -> int:
    from .augment import StepState, adversarial_params
    from .classic import gray_world
    from .color_core import load_pfm, normalize_illuminant, save_pfm
    from .model import load_checkpoint, prepare_image
    from .tone_curve import apply_curve
    from .color_core import LinearImage

    img = load_pfm(args.image)
    weights, _ = load_checkpoint(args.ckpt)
    if args.label is not None:
        parts = [float(v) for v in args.label.split(",")]
        if len(parts) != 3:
            raise ValueError("--label must be three comma-separated numbers")
        reference = normalize_illuminant(np.asarray(parts))
    else:
        reference = gray_world(img)

    size = weights.config.input_size
    batch = prepare_image(img, size)[None]
    labels = reference.rgb[None, :]
    theta, _ = adversarial_params(batch, labels, weights, StepState())
    adversarial = apply_curve(img, theta)
    save_pfm(adversarial, args.out)
    theta.to_json(args.curve_out)
    print(f"wrote {args.out} and {args.curve_out}")
    return 0


def _manifest_path(data: str) -> Path:
    path = Path(data)
    return path if path.suffix == ".jsonl" else path / "manifest.jsonl"


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    limits = None
    if args.workers is not None:
        if args.workers < 1:
            parser.error("--workers must be >= 1")
        try:
            from threadpoolctl import threadpool_limits

            limits = threadpool_limits(limits=args.workers)
        except ImportError:
            limits = None
    try:
        return args.fn(args)
    except BrokenPipeError:
        return 1
    except Exception as exc:  # noqa: BLE001 - map to exit codes at the boundary
        from .trainer import ConfigError

        code = 2 if isinstance(exc, ConfigError) else 1
        print(f"error: {exc}", file=sys.stderr)
        return code
    finally:
        if limits is not None:
            limits.unregister()


if __name__ == "__main__":
    sys.exit(main())
