"""Evaluation harness: error summaries, smoothing, splits, reports.

Angular-error distributions are summarized by the usual five statistics
(median, mean, trimean, best-25%, worst-25%). Robustness is the relative
increase from train-split to test-split error; per-epoch logs are smoothed
with a trailing moving average before the final values are compared.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .color_core import angular_error_rows
from .model import ModelWeights, forward_batch, load_checkpoint
from .synth import DatasetManifest, ManifestRecord, load_images, load_manifest

SMOOTHING_WINDOW = 500
METRIC_FIELDS = ("median", "mean", "trimean", "b25", "w25")


class EmptyInput(ValueError):
    """A summary over zero errors was requested."""


class DivisionByZero(ValueError):
    """Relative error increase over a (near-)zero train error."""


@dataclass(frozen=True)
class ErrorSummary:
    median: float
    mean: float
    trimean: float
    best25: float
    worst25: float

    def as_dict(self) -> dict:
        return {
            "median": self.median,
            "mean": self.mean,
            "trimean": self.trimean,
            "b25": self.best25,
            "w25": self.worst25,
        }


def summary_stats(errors) -> ErrorSummary:
    """Five-number summary of an error sample.

    Quantiles interpolate linearly at position q*(n-1); trimean is
    (Q1 + 2*Q2 + Q3) / 4; best/worst-25% average the lowest/highest
    ceil(n/4) values.
    """
    arr = np.asarray(errors, dtype=np.float64).ravel()
    if arr.size == 0:
        raise EmptyInput("cannot summarize an empty error sample")
    if not np.all(np.isfinite(arr)):
        raise ValueError("errors must be finite")
    q1, q2, q3 = np.quantile(arr, [0.25, 0.5, 0.75])
    k = math.ceil(arr.size / 4)
    ordered = np.sort(arr)
    return ErrorSummary(
        median=float(q2),
        mean=float(arr.mean()),
        trimean=float((q1 + 2.0 * q2 + q3) / 4.0),
        best25=float(ordered[:k].mean()),
        worst25=float(ordered[-k:].mean()),
    )


def moving_average(series, window: int = SMOOTHING_WINDOW) -> np.ndarray:
    """Trailing mean over the most recent min(t, window) entries."""
    if window < 1:
        raise ValueError("window must be >= 1")
    arr = np.asarray(series, dtype=np.float64).ravel()
    out = np.empty_like(arr)
    for t in range(arr.size):
        out[t] = arr[max(0, t - window + 1):t + 1].mean()
    return out


def error_increase(train_error: float, test_error: float) -> float:
    """Percent increase 100 * (test - train) / train."""
    if abs(train_error) <= 1e-12:
        raise DivisionByZero("train error is zero; relative increase undefined")
    return 100.0 * (test_error - train_error) / train_error


def kfold_split(records, k: int = 3, seed: int = 0) -> list[list]:
    """Deterministic shuffled partition into k folds, sizes within 1."""
    items = list(records)
    if k < 2 or k > len(items):
        raise ValueError(f"k must lie in 2..{len(items)}, got {k}")
    order = np.random.default_rng(seed).permutation(len(items))
    base, extra = divmod(len(items), k)
    folds = []
    start = 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        folds.append([items[j] for j in order[start:start + size]])
        start += size
    return folds


def predict_batched(x: np.ndarray, weights: ModelWeights,
                    batch_size: int = 128) -> np.ndarray:
    """Illuminant predictions for an (N, 3, S, S) batch; (N, 3) float32."""
    outputs = []
    for start in range(0, x.shape[0], batch_size):
        fw = forward_batch(x[start:start + batch_size], weights)
        outputs.append(fw.illuminant.data)
    return np.concatenate(outputs, axis=0)


def split_errors(manifest: DatasetManifest, split: str, weights: ModelWeights,
                 batch_size: int = 128) -> np.ndarray:
    """Per-image angular errors (degrees) over one manifest split."""
    records = manifest.split(split)
    if not records:
        raise EmptyInput(f"manifest has no records in split {split!r}")
    x, labels = load_images(manifest, records, input_size=weights.config.input_size)
    est = predict_batched(x, weights, batch_size).astype(np.float64)
    norms = np.maximum(np.sqrt(np.sum(est * est, axis=1, keepdims=True)), 1e-12)
    return angular_error_rows(est / norms, labels)


# ---------------------------------------------------------------------------
# Metric logs (CSV written by the trainer) and robustness reports
# ---------------------------------------------------------------------------

LOG_HEADER = ("epoch", "split", "mean", "median", "trimean", "b25", "w25")


def read_metric_log(path: str | Path) -> dict[str, list[float]]:
    """Per-epoch mean angular error by split, in epoch order."""
    curves: dict[str, list[tuple[int, float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            curves.setdefault(row["split"], []).append((int(row["epoch"]), float(row["mean"])))
    return {
        split: [v for _, v in sorted(points)]
        for split, points in curves.items()
    }


def metric_log_path(ckpt_path: str | Path) -> Path:
    """Conventional sibling log location for a checkpoint."""
    p = Path(ckpt_path)
    stem = p.with_suffix("") if p.suffix == ".json" else p
    return stem.with_suffix(".metrics.csv")


def robustness_report(ckpts: dict[str, str | Path], manifest_path: str | Path,
                      window: int = SMOOTHING_WINDOW) -> dict:
    """Evaluate checkpoints on the position split of one dataset.

    Per model: fresh five-number summaries on the train and test splits,
    plus (when the trainer's sibling metric log exists) the final smoothed
    train/test mean errors and the error increase computed from them.
    """
    manifest = load_manifest(manifest_path)
    report: dict = {
        "manifest": str(manifest_path),
        "window": window,
        "models": {},
    }
    for label, ckpt in ckpts.items():
        weights, meta = load_checkpoint(ckpt)
        entry: dict = {"checkpoint": str(ckpt), "step": meta.get("step")}
        means = {}
        for split in ("train", "test"):
            errs = split_errors(manifest, split, weights)
            entry[split] = summary_stats(errs).as_dict()
            means[split] = entry[split]["mean"]
        entry["error_increase_pct"] = error_increase(means["train"], means["test"])

        log_path = metric_log_path(ckpt)
        if log_path.exists():
            curves = read_metric_log(log_path)
            if "train" in curves and "test" in curves:
                smooth_train = moving_average(curves["train"], window)[-1]
                smooth_test = moving_average(curves["test"], window)[-1]
                entry["smoothed"] = {
                    "train_mean": float(smooth_train),
                    "test_mean": float(smooth_test),
                    "error_increase_pct": error_increase(float(smooth_train),
                                                         float(smooth_test)),
                }
        report["models"][label] = entry
    return report


def report_to_json(report: dict, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(report, indent=2) + "\n")
    return path


def report_to_csv(report: dict, path: str | Path) -> Path:
    """One row per model x split; error increase repeated on both rows."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "split", *METRIC_FIELDS, "error_increase_pct"])
        for label, entry in report["models"].items():
            increase = entry.get("smoothed", {}).get(
                "error_increase_pct", entry["error_increase_pct"])
            for split in ("train", "test"):
                stats = entry[split]
                writer.writerow([
                    label, split,
                    *[f"{stats[f]:.6f}" for f in METRIC_FIELDS],
                    f"{increase:.6f}",
                ])
    return path


def write_smoothed_curve(log_path: str | Path, out_path: str | Path, split: str,
                         window: int = SMOOTHING_WINDOW) -> Path:
    """Plot-ready TSV: epoch and smoothed mean error, two columns."""
    curves = read_metric_log(log_path)
    if split not in curves:
        raise ValueError(f"log {log_path} has no split {split!r}")
    smooth = moving_average(curves[split], window)
    out_path = Path(out_path)
    lines = ["epoch\tsmoothed_mean"]
    lines += [f"{epoch}\t{value:.6f}" for epoch, value in enumerate(smooth)]
    out_path.write_text("\n".join(lines) + "\n")
    return out_path
