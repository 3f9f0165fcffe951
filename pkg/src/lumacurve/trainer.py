"""Training loops: plain angular-loss baseline and the brightness-robust
variant (adversarial curve augmentation + contrastive embedding loss).

Each robust step runs the curve attack (one forward/backward for input
gradients), one plain forward on the clean batch for constant anchor
embeddings, and one recorded forward on the augmented batch that carries
the joint loss. The attack's curve weights are treated as constants when
updating the model. The contrastive weight follows a two-phase schedule:
heavy during the first half of training, light afterwards.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autograd as ag
from .augment import StepState, augment_batch
from .color_core import angular_error_rows
from .contrastive import ContrastiveConfig, info_nce
from .evaluation import predict_batched, summary_stats
from .model import ModelConfig, ModelWeights, forward_batch, save_checkpoint
from .synth import load_manifest, load_images

LOG_HEADER = "epoch,split,mean,median,trimean,b25,w25"


class ConfigError(ValueError):
    """A training-configuration field is missing, unknown, or invalid."""


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 16
    seed: int = 0
    bre_enabled: bool = True
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    curve_segments: int = 32
    temperature: float = 1.0
    adv_weight: float = 1.0
    ctr_weight_early: float = 10.0
    ctr_weight_late: float = 0.1
    with_clean_loss: bool = False
    per_image_theta: bool = False
    per_image_lambda: bool = False
    symmetric_contrastive: bool = False
    input_size: int = 64

    def validate(self) -> "TrainConfig":
        checks = [
            ("epochs", self.epochs >= 1),
            ("batch_size", self.batch_size >= 1),
            ("learning_rate", self.learning_rate > 0.0),
            ("beta1", 0.0 <= self.beta1 < 1.0),
            ("beta2", 0.0 <= self.beta2 < 1.0),
            ("epsilon", self.epsilon > 0.0),
            ("curve_segments", self.curve_segments >= 1),
            ("temperature", self.temperature > 0.0),
            ("adv_weight", self.adv_weight >= 0.0),
            ("ctr_weight_early", self.ctr_weight_early >= 0.0),
            ("ctr_weight_late", self.ctr_weight_late >= 0.0),
            ("input_size", self.input_size >= 8),
        ]
        for name, ok in checks:
            if not ok:
                raise ConfigError(f"invalid value for config field {name!r}: {getattr(self, name)!r}")
        return self

    @classmethod
    def from_dict(cls, payload: dict) -> "TrainConfig":
        fields = {f.name: f for f in dataclasses.fields(cls)}
        values: dict = {}
        for key, value in payload.items():
            if key not in fields:
                raise ConfigError(f"unknown config field {key!r}")
            expect = fields[key].type
            if expect == "bool":
                if not isinstance(value, bool):
                    raise ConfigError(f"config field {key!r} must be a boolean, got {value!r}")
            elif expect == "int":
                if isinstance(value, bool) or not isinstance(value, int):
                    raise ConfigError(f"config field {key!r} must be an integer, got {value!r}")
            elif expect == "float":
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise ConfigError(f"config field {key!r} must be a number, got {value!r}")
                value = float(value)
            values[key] = value
        return cls(**values).validate()


def schedule(epoch: int, total_epochs: int,
             early: tuple[float, float] = (1.0, 10.0),
             late: tuple[float, float] = (1.0, 0.1)) -> tuple[float, float]:
    """(adversarial, contrastive) loss weights for one epoch.

    The heavy contrastive phase covers epochs strictly below total/2.
    """
    if total_epochs < 1 or not (0 <= epoch < total_epochs):
        raise ValueError(f"epoch {epoch} outside 0..{total_epochs - 1}")
    return early if epoch < total_epochs / 2 else late


class Adam:
    """Standard Adam over a dict of named float32 arrays."""

    def __init__(self, arrays: dict[str, np.ndarray], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in arrays.items()}
        self.v = {k: np.zeros_like(v) for k, v in arrays.items()}

    def update(self, arrays: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for name in arrays:
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[name] / b1t
            v_hat = self.v[name] / b2t
            arrays[name] -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(np.float32)


def train_step_baseline(xb: np.ndarray, lb: np.ndarray, weights: ModelWeights,
                        adam: Adam) -> float:
    """One Adam step on the clean-batch angular loss."""
    rec = ag.GradientRecord()
    fw = forward_batch(xb, weights, rec)
    loss = ag.angular_loss(rec, fw.illuminant, lb.astype(np.float32))
    grads = ag.backward(rec, loss)
    adam.update(weights.arrays, {name: grads[t.node] for name, t in fw.param_tensors.items()})
    return float(loss.data)


def train_step_bre(xb: np.ndarray, lb: np.ndarray, weights: ModelWeights,
                   adam: Adam, state: StepState, rng: np.random.Generator,
                   adv_weight: float, ctr_weight: float,
                   cfg: TrainConfig) -> tuple[StepState, float]:
    """One robust step: attack, blend, joint loss, Adam update."""
    res = augment_batch(
        xb, lb, weights, state, rng,
        segments=cfg.curve_segments,
        per_image_theta=cfg.per_image_theta,
        per_image_lambda=cfg.per_image_lambda,
    )

    z_clean = None
    if ctr_weight != 0.0:
        z_clean = forward_batch(xb, weights).embedding.data.copy()

    rec = ag.GradientRecord()
    forwards = [forward_batch(res.augmented, weights, rec)]
    lb32 = lb.astype(np.float32)
    loss = ag.scale(rec, ag.angular_loss(rec, forwards[0].illuminant, lb32), adv_weight)
    if ctr_weight != 0.0:
        ctr_cfg = ContrastiveConfig(cfg.temperature, cfg.symmetric_contrastive)
        ctr = info_nce(z_clean, forwards[0].embedding, ctr_cfg, rec)
        loss = ag.add(rec, loss, ag.scale(rec, ctr, ctr_weight))
    if cfg.with_clean_loss:
        clean_fw = forward_batch(xb, weights, rec)
        forwards.append(clean_fw)
        loss = ag.add(rec, loss, ag.angular_loss(rec, clean_fw.illuminant, lb32))

    node_grads = ag.backward(rec, loss)
    grads: dict[str, np.ndarray] = {}
    for fw in forwards:
        for name, tensor in fw.param_tensors.items():
            g = node_grads[tensor.node]
            grads[name] = g if name not in grads else grads[name] + g
    adam.update(weights.arrays, grads)
    return res.state, float(loss.data)


@dataclass
class TrainResult:
    weights: ModelWeights
    final_ckpt: Path
    best_ckpt: Path
    log_path: Path
    best_epoch: int
    final_test_mean: float
    log_rows: list[str]


def _epoch_row(epoch: int, split: str, errors: np.ndarray) -> str:
    s = summary_stats(errors)
    return (f"{epoch},{split},{s.mean:.6f},{s.median:.6f},"
            f"{s.trimean:.6f},{s.best25:.6f},{s.worst25:.6f}")


def train(manifest_path: str | Path, cfg: TrainConfig, out_ckpt: str | Path,
          verbose: bool = False) -> TrainResult:
    """Train on a dataset manifest's train split, logging per-epoch metrics.

    Writes <stem>.json/.bin (final), <stem>_best.json/.bin (lowest test
    mean), and <stem>.metrics.csv next to the checkpoint.
    """
    cfg.validate()
    manifest = load_manifest(manifest_path)
    train_recs = manifest.split("train")
    test_recs = manifest.split("test")
    if not train_recs:
        raise ConfigError(f"manifest {manifest_path} has no train split")
    if not test_recs:
        raise ConfigError(f"manifest {manifest_path} has no test split")
    x_train, l_train = load_images(manifest, train_recs, input_size=cfg.input_size)
    x_test, l_test = load_images(manifest, test_recs, input_size=cfg.input_size)

    weights = ModelWeights.init(ModelConfig(input_size=cfg.input_size), cfg.seed)
    adam = Adam(weights.arrays, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)
    state = StepState()
    rng_shuffle = np.random.default_rng([cfg.seed, 11])
    rng_blend = np.random.default_rng([cfg.seed, 13])

    rows = [LOG_HEADER]
    best_mean = np.inf
    best_epoch = -1
    best_weights = weights.copy()
    n = x_train.shape[0]
    final_test_mean = np.inf

    for epoch in range(cfg.epochs):
        adv_w, ctr_w = schedule(epoch, cfg.epochs,
                                (cfg.adv_weight, cfg.ctr_weight_early),
                                (cfg.adv_weight, cfg.ctr_weight_late))
        perm = rng_shuffle.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            xb, lb = x_train[idx], l_train[idx]
            if cfg.bre_enabled:
                state, _ = train_step_bre(xb, lb, weights, adam, state, rng_blend,
                                          adv_w, ctr_w, cfg)
            else:
                train_step_baseline(xb, lb, weights, adam)

        train_err = _clean_errors(x_train, l_train, weights)
        test_err = _clean_errors(x_test, l_test, weights)
        rows.append(_epoch_row(epoch, "train", train_err))
        rows.append(_epoch_row(epoch, "test", test_err))
        final_test_mean = float(test_err.mean())
        if final_test_mean < best_mean:
            best_mean = final_test_mean
            best_epoch = epoch
            best_weights = weights.copy()
        if verbose and (epoch % 25 == 0 or epoch == cfg.epochs - 1):
            print(f"epoch {epoch}: train {train_err.mean():.3f} deg, "
                  f"test {final_test_mean:.3f} deg")

    stem = Path(out_ckpt)
    stem = stem.with_suffix("") if stem.suffix == ".json" else stem
    final_ckpt = save_checkpoint(weights, stem, step=cfg.epochs)
    best_ckpt = save_checkpoint(best_weights, stem.parent / (stem.name + "_best"),
                                step=best_epoch + 1)
    log_path = stem.with_suffix(".metrics.csv")
    log_path.write_text("\n".join(rows) + "\n")
    return TrainResult(
        weights=weights,
        final_ckpt=final_ckpt,
        best_ckpt=best_ckpt,
        log_path=log_path,
        best_epoch=best_epoch,
        final_test_mean=final_test_mean,
        log_rows=rows,
    )


def _clean_errors(x: np.ndarray, labels: np.ndarray, weights: ModelWeights) -> np.ndarray:
    est = predict_batched(x, weights).astype(np.float64)
    norms = np.maximum(np.sqrt(np.sum(est * est, axis=1, keepdims=True)), 1e-12)
    return angular_error_rows(est / norms, labels)
