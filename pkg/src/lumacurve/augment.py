"""Adversarial brightness augmentation.

Per batch: start from the identity tone curve, take one gradient-ascent
step on the mean angular loss with respect to the curve weights, then blend
the adversarially filtered images with the clean ones. The ascent step size
adapts as an exponential moving average of one tenth of the sanitized
gradient norm, so attack strength tracks how sensitive the current model is
to brightness distortions.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autograd as ag
from . import tone_curve as tc
from .color_core import LinearImage, ShapeMismatch, batch_brightness
from .model import ModelWeights, forward_batch

# Gradient entries beyond this magnitude are treated as outliers.
GRAD_CLIP = 1.0
ZERO_GRAD_NORM = 1e-12


@dataclass(frozen=True)
class StepState:
    """Adaptive ascent-step state: step size, EMA momentum, step counter."""

    alpha: float = 0.1
    momentum: float = 0.9
    step: int = 0

    def __post_init__(self):
        if not (self.alpha >= 0.0):
            raise ValueError(f"alpha must be nonnegative, got {self.alpha}")
        if not (0.0 <= self.momentum < 1.0):
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")


@dataclass(frozen=True)
class AugmentResult:
    augmented: np.ndarray
    theta: tc.CurveParams | list[tc.CurveParams]
    state: StepState
    blend_weight: float | np.ndarray


def sanitize_gradient(g: np.ndarray) -> np.ndarray:
    """Replace out-of-range entries (|g| > 1) by the mean of in-range ones.

    If every entry is out of range the result is all zeros. Idempotent:
    replacement values are themselves in range.
    """
    g = np.asarray(g, dtype=np.float64)
    in_range = np.abs(g) <= GRAD_CLIP
    if not np.any(in_range):
        return np.zeros_like(g)
    fill = float(g[in_range].mean())
    return np.where(in_range, g, fill)


def adapt_step(state: StepState, g: np.ndarray) -> StepState:
    """EMA update alpha <- m*alpha + (1-m)*||g||_2 / 10."""
    norm = float(np.sqrt(np.sum(np.asarray(g, dtype=np.float64) ** 2)))
    alpha = state.momentum * state.alpha + (1.0 - state.momentum) * (norm / 10.0)
    return replace(state, alpha=alpha, step=state.step + 1)


def blend(clean: LinearImage, adv: LinearImage, lam: float) -> LinearImage:
    """Convex combination lam*adv + (1-lam)*clean."""
    if not (0.0 <= lam <= 1.0):
        raise ValueError(f"blend weight must lie in [0, 1], got {lam}")
    if clean.data.shape != adv.data.shape:
        raise ShapeMismatch(
            f"blend shapes disagree: {clean.data.shape} vs {adv.data.shape}"
        )
    return LinearImage(_blend_arrays(clean.data, adv.data, lam))


def _blend_arrays(clean: np.ndarray, adv: np.ndarray, lam) -> np.ndarray:
    lam32 = np.float32(lam) if np.isscalar(lam) else np.asarray(lam, dtype=np.float32)
    return lam32 * adv + (np.float32(1.0) - lam32) * clean


def _chain_curve_grad(weight_maps: np.ndarray, u: np.ndarray,
                      params: tc.CurveParams, per_image: bool) -> np.ndarray:
    """Contract pixel weights against the curve's theta-gradient.

    Equivalent to summing weight_maps * curve_param_grad(u) over pixels, but
    bucketized by active segment: the ramp basis is 1 below the active
    segment, fractional on it, and 0 above, so per-segment bincounts plus a
    suffix sum replace the (pixels x L) basis contraction.
    """
    seg = params.segments
    total = params.total
    k, f = tc.segment_split(u, seg)
    value = (params.prefix[k] + f * params.theta[k]) / total
    if per_image:
        n = u.shape[0]
        idx = (np.arange(n, dtype=np.intp)[:, None, None] * seg + k).ravel()
        wk = np.bincount(idx, weights=weight_maps.ravel(), minlength=n * seg).reshape(n, seg)
        wf = np.bincount(idx, weights=(weight_maps * f).ravel(), minlength=n * seg).reshape(n, seg)
        suffix = wk.sum(axis=1, keepdims=True) - np.cumsum(wk, axis=1)
        sv = (weight_maps * value).reshape(n, -1).sum(axis=1, keepdims=True)
        return (suffix + wf - sv) / total
    wk = np.bincount(k.ravel(), weights=weight_maps.ravel(), minlength=seg)
    wf = np.bincount(k.ravel(), weights=(weight_maps * f).ravel(), minlength=seg)
    suffix = wk.sum() - np.cumsum(wk)
    sv = float((weight_maps * value).sum())
    return (suffix + wf - sv) / total


def _curve_ascent(images: np.ndarray, labels: np.ndarray, weights: ModelWeights,
                  state: StepState, segments: int, per_image: bool):
    """One ascent step on the curve weights; returns (theta, state, u)."""
    if images.ndim != 4 or images.shape[1] != 3:
        raise ShapeMismatch(f"expected an (N, 3, H, W) batch, got {images.shape}")
    if labels.shape != (images.shape[0], 3):
        raise ShapeMismatch(f"labels must be (N, 3), got {labels.shape}")
    theta0 = tc.CurveParams.identity(segments)
    u = batch_brightness(images)
    filtered = tc.apply_curve_batch(images, u, theta0)

    rec = ag.GradientRecord()
    fw = forward_batch(filtered, weights, rec, input_grad=True)
    loss = ag.angular_loss(rec, fw.illuminant, labels.astype(np.float32))
    grads = ag.backward(rec, loss)
    dx = grads[fw.input_tensor.node].astype(np.float64)

    # Chain through the per-pixel gain: d filtered / d theta_j is
    # pixel_value / max(u, floor) times the curve weight gradient at u.
    weight_maps = (dx * images.astype(np.float64)).sum(axis=1) / np.maximum(u, tc.GAIN_DENOM_FLOOR)

    if per_image:
        n = images.shape[0]
        # Per-image objectives: undo the batch-mean factor in the loss.
        g_rows = _chain_curve_grad(weight_maps, u, theta0, per_image=True) * n
        g_rows = np.stack([sanitize_gradient(row) for row in g_rows])
        norms = np.sqrt(np.sum(g_rows * g_rows, axis=1))
        new_state = adapt_step(state, np.atleast_1d(norms.mean()))
        thetas = []
        for row, norm in zip(g_rows, norms):
            if norm < ZERO_GRAD_NORM:
                thetas.append(theta0)
            else:
                stepped = tc.CurveParams(theta0.theta + new_state.alpha * row / norm)
                thetas.append(tc.project_params(stepped))
        return thetas, new_state, u

    g = _chain_curve_grad(weight_maps, u, theta0, per_image=False)
    g = sanitize_gradient(g)
    new_state = adapt_step(state, g)
    norm = float(np.sqrt(np.sum(g * g)))
    if norm < ZERO_GRAD_NORM:
        return theta0, new_state, u
    stepped = tc.CurveParams(theta0.theta + new_state.alpha * g / norm)
    return tc.project_params(stepped), new_state, u


def adversarial_params(images: np.ndarray, labels: np.ndarray, weights: ModelWeights,
                       state: StepState, segments: int = tc.DEFAULT_SEGMENTS,
                       per_image: bool = False):
    """Adversarial curve weights for a batch; returns (theta, new state).

    theta is a single CurveParams (or a per-image list when per_image=True).
    Deterministic given (weights, batch, state).
    """
    theta, new_state, _ = _curve_ascent(images, labels, weights, state, segments, per_image)
    return theta, new_state


def augment_batch(images: np.ndarray, labels: np.ndarray, weights: ModelWeights,
                  state: StepState, rng: np.random.Generator,
                  segments: int = tc.DEFAULT_SEGMENTS,
                  per_image_theta: bool = False,
                  per_image_lambda: bool = False) -> AugmentResult:
    """Adversarially filter a batch and blend with the clean images.

    One blend weight lambda ~ U(0, 1) per batch (or per image when flagged).
    """
    theta, new_state, u = _curve_ascent(images, labels, weights, state,
                                        segments, per_image_theta)
    if per_image_theta:
        adv = np.stack([
            tc.apply_curve_batch(images[i:i + 1], u[i:i + 1], th)[0]
            for i, th in enumerate(theta)
        ])
    else:
        adv = tc.apply_curve_batch(images, u, theta)

    if per_image_lambda:
        lam = rng.uniform(size=images.shape[0])
        mixed = _blend_arrays(images, adv, lam[:, None, None, None])
    else:
        lam = float(rng.uniform())
        mixed = _blend_arrays(images, adv, lam)
    return AugmentResult(augmented=mixed, theta=theta, state=new_state, blend_weight=lam)
