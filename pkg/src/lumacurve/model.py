"""Toy convolutional illuminant estimator.

Three stride-2 conv blocks (3 -> 8 -> 16 -> 32), global mean pooling, a
rectified 32 -> 3 illuminant head, and a 32 -> 32 -> 16 projection head for
contrastive embeddings. Both heads l2-normalize their outputs. Inputs are
raw linear values; no standardization is applied, because overall
brightness is part of the signal under study.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autograd as ag
from .color_core import Illuminant, LinearImage, ShapeMismatch, angular_error, resize_area

CHECKPOINT_FORMAT = "lumacurve-checkpoint-v1"


@dataclass(frozen=True)
class ModelConfig:
    input_size: int = 64
    conv_channels: tuple[int, int, int] = (8, 16, 32)
    proj_hidden: int = 32
    embed_dim: int = 16

    @property
    def feat_dim(self) -> int:
        return self.conv_channels[-1]


def _param_shapes(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    c1, c2, c3 = cfg.conv_channels
    return [
        ("conv1_w", (c1, 3, 3, 3)),
        ("conv1_b", (c1,)),
        ("conv2_w", (c2, c1, 3, 3)),
        ("conv2_b", (c2,)),
        ("conv3_w", (c3, c2, 3, 3)),
        ("conv3_b", (c3,)),
        ("head_w", (3, cfg.feat_dim)),
        ("head_b", (3,)),
        ("proj1_w", (cfg.proj_hidden, cfg.feat_dim)),
        ("proj1_b", (cfg.proj_hidden,)),
        ("proj2_w", (cfg.embed_dim, cfg.proj_hidden)),
        ("proj2_b", (cfg.embed_dim,)),
    ]


@dataclass
class ModelWeights:
    """Named float32 weight arrays plus the architecture that shaped them."""

    config: ModelConfig
    seed: int
    arrays: dict[str, np.ndarray]

    @classmethod
    def init(cls, config: ModelConfig = ModelConfig(), seed: int = 0) -> "ModelWeights":
        """He-style fan-in uniform init for weights, zeros for biases.

        The rectified illuminant head is special-cased so it can never start
        dead: with only three output units and nonnegative input features, a
        symmetric zero-mean init rectifies the whole head away (all-zero
        prediction, no gradient) for a non-trivial fraction of seeds, and the
        failure scales with input brightness so no constant bias alone fixes
        it. Nonnegative head weights plus a positive bias make the
        pre-activation >= 0.5 for every input.
        """
        rng = np.random.default_rng(seed)
        arrays: dict[str, np.ndarray] = {}
        for name, shape in _param_shapes(config):
            if name == "head_b":
                arrays[name] = np.full(shape, 0.5, dtype=np.float32)
            elif name.endswith("_b"):
                arrays[name] = np.zeros(shape, dtype=np.float32)
            else:
                fan_in = int(np.prod(shape[1:]))
                bound = float(np.sqrt(6.0 / fan_in))
                low = 0.0 if name == "head_w" else -bound
                arrays[name] = rng.uniform(low, bound, size=shape).astype(np.float32)
        return cls(config, seed, arrays)

    def copy(self) -> "ModelWeights":
        return ModelWeights(self.config, self.seed,
                            {k: v.copy() for k, v in self.arrays.items()})

    @property
    def n_params(self) -> int:
        return sum(int(a.size) for a in self.arrays.values())


@dataclass(frozen=True)
class ModelOutputs:
    """Single-image forward results."""

    illuminant_hat: Illuminant
    feature: np.ndarray
    embedding: np.ndarray


@dataclass
class BatchForward:
    """Batched forward results; Tensors when recorded, constants otherwise."""

    illuminant: ag.Tensor
    feature: ag.Tensor
    embedding: ag.Tensor
    input_tensor: ag.Tensor | None = None
    param_tensors: dict[str, ag.Tensor] | None = None


def forward_batch(x, weights: ModelWeights, rec: ag.GradientRecord | None = None,
                  *, input_grad: bool = False) -> BatchForward:
    """Run the network on an (N, 3, S, S) batch.

    With a record, parameters (and optionally the input) are registered as
    leaves so backward() yields their gradients.
    """
    cfg = weights.config
    arr = x.data if isinstance(x, ag.Tensor) else np.asarray(x, dtype=np.float32)
    if arr.ndim != 4 or arr.shape[1] != 3:
        raise ShapeMismatch(f"expected an (N, 3, S, S) batch, got {arr.shape}")
    if arr.shape[2] != cfg.input_size or arr.shape[3] != cfg.input_size:
        raise ShapeMismatch(
            f"model expects {cfg.input_size}x{cfg.input_size} inputs, got {arr.shape[2]}x{arr.shape[3]}"
        )

    if isinstance(x, ag.Tensor):
        xt = x
    elif rec is not None and input_grad:
        xt = rec.input(arr)
    else:
        xt = ag.constant(arr)
    if rec is not None:
        pt = {name: rec.param(a) for name, a in weights.arrays.items()}
    else:
        pt = {name: ag.constant(a) for name, a in weights.arrays.items()}

    h = ag.relu(rec, ag.conv2d(rec, xt, pt["conv1_w"], pt["conv1_b"], stride=2))
    h = ag.relu(rec, ag.conv2d(rec, h, pt["conv2_w"], pt["conv2_b"], stride=2))
    h = ag.relu(rec, ag.conv2d(rec, h, pt["conv3_w"], pt["conv3_b"], stride=2))
    feat = ag.global_mean_pool(rec, h)

    # Rectify before normalizing so predictions stay in the nonnegative octant.
    ill = ag.l2_normalize(rec, ag.relu(rec, ag.affine(rec, feat, pt["head_w"], pt["head_b"])))

    proj = ag.relu(rec, ag.affine(rec, feat, pt["proj1_w"], pt["proj1_b"]))
    emb = ag.l2_normalize(rec, ag.affine(rec, proj, pt["proj2_w"], pt["proj2_b"]))

    return BatchForward(
        illuminant=ill,
        feature=feat,
        embedding=emb,
        input_tensor=xt if xt.node is not None else None,
        param_tensors=pt if rec is not None else None,
    )


def prepare_image(img: LinearImage, input_size: int) -> np.ndarray:
    """HWC image -> (3, S, S) float32 model input, area-resized if needed."""
    if (img.height, img.width) != (input_size, input_size):
        img = resize_area(img, input_size, input_size)
    return np.ascontiguousarray(img.data.transpose(2, 0, 1))


def forward_image(img: LinearImage, weights: ModelWeights) -> ModelOutputs:
    """Single-image convenience wrapper around forward_batch."""
    x = prepare_image(img, weights.config.input_size)[None]
    fw = forward_batch(x, weights)
    row = fw.illuminant.data[0].astype(np.float64)
    norm = float(np.sqrt(np.sum(row * row)))
    if norm < 1e-12:
        raise ValueError("illuminant head collapsed to zero for this input")
    return ModelOutputs(
        illuminant_hat=Illuminant(row / norm),
        feature=fw.feature.data[0].copy(),
        embedding=fw.embedding.data[0].copy(),
    )


def loss_angular(outputs: ModelOutputs, reference: Illuminant) -> float:
    """Angular error of a single prediction, in degrees."""
    return angular_error(outputs.illuminant_hat, reference)


# ---------------------------------------------------------------------------
# Checkpoints: JSON manifest + raw little-endian float32 blob with
# per-tensor offsets (in elements).
# ---------------------------------------------------------------------------


def checkpoint_paths(path: str | Path) -> tuple[Path, Path]:
    """Manifest/blob pair for a checkpoint path or stem."""
    p = Path(path)
    stem = p.with_suffix("") if p.suffix == ".json" else p
    return stem.with_suffix(".json"), stem.with_suffix(".bin")


def save_checkpoint(weights: ModelWeights, path: str | Path, step: int = 0) -> Path:
    """Write <stem>.json + <stem>.bin; returns the manifest path."""
    manifest_path, blob_path = checkpoint_paths(path)
    tensors = []
    offset = 0
    chunks = []
    for name, shape in _param_shapes(weights.config):
        arr = np.ascontiguousarray(weights.arrays[name], dtype="<f4")
        if arr.shape != shape:
            raise ShapeMismatch(f"weight {name} has shape {arr.shape}, expected {shape}")
        tensors.append({"name": name, "shape": list(shape), "offset": offset})
        offset += int(arr.size)
        chunks.append(arr.tobytes())
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "architecture": {
            "input_size": weights.config.input_size,
            "conv_channels": list(weights.config.conv_channels),
            "proj_hidden": weights.config.proj_hidden,
            "embed_dim": weights.config.embed_dim,
        },
        "seed": weights.seed,
        "step": step,
        "dtype": "<f4",
        "blob": blob_path.name,
        "total_elements": offset,
        "tensors": tensors,
    }
    blob_path.write_bytes(b"".join(chunks))
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest_path


def load_checkpoint(path: str | Path) -> tuple[ModelWeights, dict]:
    """Read a checkpoint pair back into ModelWeights (+ raw manifest)."""
    manifest_path, default_blob = checkpoint_paths(path)
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{manifest_path} is not a {CHECKPOINT_FORMAT} manifest")
    arch = manifest["architecture"]
    cfg = ModelConfig(
        input_size=int(arch["input_size"]),
        conv_channels=tuple(int(c) for c in arch["conv_channels"]),
        proj_hidden=int(arch["proj_hidden"]),
        embed_dim=int(arch["embed_dim"]),
    )
    blob_path = manifest_path.parent / manifest.get("blob", default_blob.name)
    blob = np.frombuffer(blob_path.read_bytes(), dtype="<f4")
    if blob.size != int(manifest["total_elements"]):
        raise ValueError(f"checkpoint blob {blob_path} has {blob.size} elements, "
                         f"manifest says {manifest['total_elements']}")
    arrays: dict[str, np.ndarray] = {}
    for entry in manifest["tensors"]:
        shape = tuple(int(s) for s in entry["shape"])
        start = int(entry["offset"])
        size = int(np.prod(shape))
        arrays[entry["name"]] = blob[start:start + size].reshape(shape).astype(np.float32)
    expected = {name for name, _ in _param_shapes(cfg)}
    if set(arrays) != expected:
        raise ValueError(f"checkpoint tensors {sorted(arrays)} do not match architecture")
    return ModelWeights(cfg, int(manifest["seed"]), arrays), manifest
