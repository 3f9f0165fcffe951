"""Brightness-contrastive InfoNCE over paired unit embeddings.

Anchors are the clean-image embeddings z_i; the positive for anchor i is
its augmented twin z*_i, and the negatives are every other sample's clean
and augmented embeddings (z_j and z*_j, j != i). A single sample has no
negatives, so its loss is exactly zero.

The loss is registered on a GradientRecord as one fused op: forward via a
stabilized log-sum-exp, backward via the analytic softmax gradient over
each anchor's candidate set. Either argument may be passed as a constant
array, in which case gradients simply stop there.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .color_core import ShapeMismatch


class NormViolation(ValueError):
    """An embedding row is not unit norm within tolerance."""


@dataclass(frozen=True)
class ContrastiveConfig:
    temperature: float = 1.0
    # Also anchor the loss on augmented embeddings and average both
    # directions. Off by default.
    symmetric: bool = False

    def __post_init__(self):
        if not (self.temperature > 0.0):
            raise ValueError(f"temperature must be positive, got {self.temperature}")


def _unit_rows(arr: np.ndarray, label: str, tol: float = 1e-4) -> np.ndarray:
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1:
        raise ShapeMismatch(f"{label} must be a nonempty (N, D) array, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{label} must be finite")
    norms = np.sqrt(np.sum(a * a, axis=1))
    worst = float(np.abs(norms - 1.0).max())
    if worst > tol:
        raise NormViolation(f"{label} rows deviate from unit norm by {worst:.2e}")
    return a


def _nce_forward_backward(za: np.ndarray, zb: np.ndarray, tau: float):
    """Loss and gradients with za as anchors and zb as positives.

    Candidates for anchor i: positive zb_i, negatives za_j and zb_j (j != i).
    Returns (loss, dloss/dza, dloss/dzb) in float64.
    """
    n = za.shape[0]
    sims_aa = za @ za.T / tau
    sims_ab = za @ zb.T / tau
    # Candidate logit matrix per anchor: own-row za entries masked out;
    # column n + i holds the positive.
    logits = np.concatenate([sims_aa, sims_ab], axis=1)
    logits[np.arange(n), np.arange(n)] = -np.inf
    pos = sims_ab[np.arange(n), np.arange(n)]

    peak = logits.max(axis=1)
    stable = np.exp(logits - peak[:, None])
    # Sorted reductions make the value invariant to batch order bitwise,
    # not just to rounding; permuting the batch permutes candidate sets.
    denom = np.sort(stable, axis=1).sum(axis=1)
    lse = peak + np.log(denom)
    loss = float(np.sort(lse - pos).sum() / n)

    soft = stable / denom[:, None]
    p_aa = soft[:, :n]
    p_ab = soft[:, n:].copy()
    p_ab[np.arange(n), np.arange(n)] -= 1.0

    scale = 1.0 / (n * tau)
    dza = (p_aa @ za + p_aa.T @ za + p_ab @ zb) * scale
    dzb = (p_ab.T @ za) * scale
    return loss, dza, dzb


def info_nce(z, z_star, cfg: ContrastiveConfig = ContrastiveConfig(),
             rec: ag.GradientRecord | None = None) -> ag.Tensor:
    """InfoNCE loss over clean/augmented embedding pairs; scalar Tensor."""
    zt = z if isinstance(z, ag.Tensor) else ag.constant(z)
    st = z_star if isinstance(z_star, ag.Tensor) else ag.constant(z_star)
    za = _unit_rows(zt.data, "z")
    zb = _unit_rows(st.data, "z_star")
    if za.shape != zb.shape:
        raise ShapeMismatch(f"z and z_star shapes disagree: {za.shape} vs {zb.shape}")
    tau = cfg.temperature

    if za.shape[0] == 1:
        # No negatives: -log(pos / pos) = 0 identically, zero gradient.
        loss = 0.0
        dza = np.zeros_like(za)
        dzb = np.zeros_like(zb)
    elif cfg.symmetric:
        loss_f, dza_f, dzb_f = _nce_forward_backward(za, zb, tau)
        loss_r, dzb_r, dza_r = _nce_forward_backward(zb, za, tau)
        loss = 0.5 * (loss_f + loss_r)
        dza = 0.5 * (dza_f + dza_r)
        dzb = 0.5 * (dzb_f + dzb_r)
    else:
        loss, dza, dzb = _nce_forward_backward(za, zb, tau)

    def bwd(g):
        gf = float(g)
        return [(gf * dza).astype(np.float32), (gf * dzb).astype(np.float32)]

    return ag.custom_op(rec, np.asarray(loss), [zt, st], bwd)
