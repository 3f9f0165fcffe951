"""Minimal reverse-mode differentiation over dense float32 tensors.

Operations record themselves onto an explicit GradientRecord; backward()
replays the record in reverse and accumulates gradients for every leaf
(parameter or differentiable input). Design constraints:

* float32 storage; explicit reductions (pools, dots, loss means, norms)
  accumulate in float64 before casting back;
* no broadcasting beyond scalar-times-tensor; shape mismatches raise;
* every forward result is checked finite (NaN/Inf raise immediately);
* op order is the only source of accumulation order, so repeated runs
  with identical inputs are bitwise identical.

The primitive set is just large enough for a small conv net, the angular
loss, and per-pixel image filters. ``custom_op`` lets callers register a
fused operation with a hand-derived backward (used by the contrastive
loss, whose log-sum-exp structure is not worth decomposing).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .color_core import ARCCOS_CLAMP, ShapeMismatch

DEG_PER_RAD = 180.0 / np.pi


class NonScalarLoss(ValueError):
    """backward() requires a scalar (size-1) loss tensor."""


class UnreachableLoss(ValueError):
    """The loss tensor was not produced by the given record."""


class NonFiniteValue(FloatingPointError):
    """A forward op produced NaN or Inf."""


@dataclass
class Tensor:
    """A value plus an optional provenance node id within one record.

    Tensors without a node are constants: gradients stop there.
    """

    data: np.ndarray
    node: int | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape


def constant(data) -> Tensor:
    """Wrap an array as a non-differentiable tensor."""
    return Tensor(_as_f32(data))


def _as_f32(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float32)
    # ascontiguousarray would promote 0-d scalars to 1-d; keep them 0-d.
    return arr if arr.flags.c_contiguous else np.ascontiguousarray(arr)


def _check_finite(arr: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValue("forward op produced non-finite values")
    return arr


# Node ids are globally unique so tensors cannot be replayed against a
# record that did not produce them.
_node_ids = itertools.count()


class GradientRecord:
    """Ordered tape of recorded operations and their leaf tensors."""

    def __init__(self):
        self._ops: list[tuple[int, tuple[int | None, ...], Callable]] = []
        self._leaf_shapes: dict[int, tuple] = {}
        self._known: set[int] = set()

    def _next_node(self) -> int:
        nid = next(_node_ids)
        self._known.add(nid)
        return nid

    def _leaf(self, data) -> Tensor:
        t = Tensor(_check_finite(_as_f32(data)), self._next_node())
        self._leaf_shapes[t.node] = t.data.shape
        return t

    def param(self, data) -> Tensor:
        """Register a trainable parameter leaf."""
        return self._leaf(data)

    def input(self, data) -> Tensor:
        """Register a differentiable input leaf."""
        return self._leaf(data)

    def record(self, out_data: np.ndarray, parents: Sequence[Tensor],
               backward_fn: Callable) -> Tensor:
        out = Tensor(out_data, self._next_node())
        self._ops.append((out.node, tuple(p.node for p in parents), backward_fn))
        return out

    def __len__(self) -> int:
        return len(self._ops)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else constant(x)


def _emit(rec: GradientRecord | None, out_data: np.ndarray,
          parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    out_data = _check_finite(_as_f32(out_data))
    if rec is None or all(p.node is None for p in parents):
        return Tensor(out_data)
    return rec.record(out_data, parents, backward_fn)


def custom_op(rec: GradientRecord | None, out_data, parents: Sequence[Tensor],
              backward_fn: Callable) -> Tensor:
    """Register a fused op. ``backward_fn(upstream)`` must return one
    gradient array (or None) per parent, in order."""
    return _emit(rec, out_data, [_wrap(p) for p in parents], backward_fn)


def backward(rec: GradientRecord, loss: Tensor) -> dict[int, np.ndarray]:
    """Accumulated gradients for every leaf of ``rec``, keyed by node id.

    Leaves the loss does not depend on get zero-filled gradients.
    """
    if loss.node is None or loss.node not in rec._known:
        raise UnreachableLoss("loss tensor was not produced by this record")
    if loss.data.size != 1:
        raise NonScalarLoss(f"loss must be scalar, got shape {loss.data.shape}")
    grads: dict[int, np.ndarray] = {loss.node: np.ones_like(loss.data)}
    for out_node, parent_nodes, backward_fn in reversed(rec._ops):
        g = grads.get(out_node)
        if g is None:
            continue
        for node, pg in zip(parent_nodes, backward_fn(g)):
            if node is None or pg is None:
                continue
            pg = _as_f32(pg)
            acc = grads.get(node)
            grads[node] = pg if acc is None else acc + pg
    return {
        node: grads.get(node, np.zeros(shape, dtype=np.float32))
        for node, shape in rec._leaf_shapes.items()
    }


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------


def conv2d(rec: GradientRecord | None, x, w, b, stride: int = 1) -> Tensor:
    """3x3 convolution, zero padding 1, stride 1 or 2.

    x: (N, C, H, W); w: (F, C, 3, 3); b: (F,).
    """
    x, w, b = _wrap(x), _wrap(w), _wrap(b)
    if stride not in (1, 2):
        raise ValueError(f"stride must be 1 or 2, got {stride}")
    if x.data.ndim != 4:
        raise ShapeMismatch(f"conv2d input must be (N, C, H, W), got {x.shape}")
    n, c, h, wd = x.data.shape
    if w.data.shape[1:] != (c, 3, 3) or b.data.shape != (w.data.shape[0],):
        raise ShapeMismatch(
            f"conv2d weights {w.data.shape} / bias {b.data.shape} do not match input {x.shape}"
        )
    xp = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ho = (h - 1) // stride + 1
    wo = (wd - 1) // stride + 1
    # (N, C, Ho, Wo, 3, 3) strided view of the padded input.
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.tensordot(win, w.data, axes=([1, 4, 5], [1, 2, 3]))
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2)) + b.data[None, :, None, None]

    w_data = w.data

    def bwd(g):
        gw = np.einsum("nfij,ncijyx->fcyx", g, win, optimize=True)
        gb = g.sum(axis=(0, 2, 3), dtype=np.float64).astype(np.float32)
        gcols = np.einsum("nfij,fcyx->ncyxij", g, w_data, optimize=True)
        gxp = np.zeros_like(xp)
        for ky in range(3):
            for kx in range(3):
                gxp[:, :, ky:ky + stride * (ho - 1) + 1:stride,
                    kx:kx + stride * (wo - 1) + 1:stride] += gcols[:, :, ky, kx]
        return [gxp[:, :, 1:h + 1, 1:wd + 1], gw, gb]

    return _emit(rec, out, [x, w, b], bwd)


def relu(rec: GradientRecord | None, x) -> Tensor:
    x = _wrap(x)
    out = np.maximum(x.data, 0.0)
    mask = x.data > 0.0

    def bwd(g):
        return [g * mask]

    return _emit(rec, out, [x], bwd)


def affine(rec: GradientRecord | None, x, w, b) -> Tensor:
    """Rowwise linear map: (N, Din) @ (Dout, Din)^T + (Dout,)."""
    x, w, b = _wrap(x), _wrap(w), _wrap(b)
    if x.data.ndim != 2 or w.data.ndim != 2 or b.data.ndim != 1:
        raise ShapeMismatch("affine expects x (N, Din), w (Dout, Din), b (Dout,)")
    if x.data.shape[1] != w.data.shape[1] or w.data.shape[0] != b.data.shape[0]:
        raise ShapeMismatch(
            f"affine shapes disagree: x {x.shape}, w {w.data.shape}, b {b.data.shape}"
        )
    out = x.data @ w.data.T + b.data
    x_data, w_data = x.data, w.data

    def bwd(g):
        return [g @ w_data, g.T @ x_data,
                g.sum(axis=0, dtype=np.float64).astype(np.float32)]

    return _emit(rec, out, [x, w, b], bwd)


def global_mean_pool(rec: GradientRecord | None, x) -> Tensor:
    """(N, C, H, W) -> (N, C) spatial mean."""
    x = _wrap(x)
    if x.data.ndim != 4:
        raise ShapeMismatch(f"global_mean_pool input must be 4-D, got {x.shape}")
    n, c, h, w = x.data.shape
    out = x.data.mean(axis=(2, 3), dtype=np.float64).astype(np.float32)
    inv = np.float32(1.0 / (h * w))

    def bwd(g):
        return [np.broadcast_to((g * inv)[:, :, None, None], (n, c, h, w)).copy()]

    return _emit(rec, out, [x], bwd)


def add(rec: GradientRecord | None, a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.shape != b.data.shape:
        raise ShapeMismatch(f"add shapes disagree: {a.shape} vs {b.shape}")

    def bwd(g):
        return [g, g]

    return _emit(rec, a.data + b.data, [a, b], bwd)


def mul(rec: GradientRecord | None, a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.shape != b.data.shape:
        raise ShapeMismatch(f"mul shapes disagree: {a.shape} vs {b.shape}")
    a_data, b_data = a.data, b.data

    def bwd(g):
        return [g * b_data, g * a_data]

    return _emit(rec, a.data * b.data, [a, b], bwd)


def scale(rec: GradientRecord | None, x, s: float) -> Tensor:
    x = _wrap(x)
    s32 = np.float32(s)

    def bwd(g):
        return [g * s32]

    return _emit(rec, x.data * s32, [x], bwd)


def l2_normalize(rec: GradientRecord | None, x) -> Tensor:
    """Normalize a vector (1-D) or each row (2-D) to unit length."""
    x = _wrap(x)
    if x.data.ndim not in (1, 2):
        raise ShapeMismatch(f"l2_normalize expects 1-D or 2-D input, got {x.shape}")
    xd = x.data.astype(np.float64)
    norms = np.maximum(np.sqrt(np.sum(xd * xd, axis=-1, keepdims=True)), 1e-12)
    y = xd / norms

    def bwd(g):
        gd = g.astype(np.float64)
        radial = np.sum(gd * y, axis=-1, keepdims=True)
        return [((gd - y * radial) / norms).astype(np.float32)]

    return _emit(rec, y.astype(np.float32), [x], bwd)


def dot(rec: GradientRecord | None, a, b) -> Tensor:
    """Inner product of two vectors, or rowwise for matching 2-D arrays."""
    a, b = _wrap(a), _wrap(b)
    if a.data.shape != b.data.shape or a.data.ndim not in (1, 2):
        raise ShapeMismatch(f"dot expects matching 1-D or 2-D shapes, got {a.shape} vs {b.shape}")
    prod = np.sum(a.data.astype(np.float64) * b.data.astype(np.float64), axis=-1)
    a_data, b_data = a.data, b.data

    def bwd(g):
        g_col = g[..., None]
        return [g_col * b_data, g_col * a_data]

    return _emit(rec, prod, [a, b], bwd)


def clamp(rec: GradientRecord | None, x, lo: float, hi: float) -> Tensor:
    """Elementwise clip to [lo, hi]; gradient passes only strictly inside."""
    x = _wrap(x)
    out = np.clip(x.data, lo, hi)
    mask = (x.data > lo) & (x.data < hi)

    def bwd(g):
        return [g * mask]

    return _emit(rec, out, [x], bwd)


def angular_loss(rec: GradientRecord | None, est, ref) -> Tensor:
    """Mean angular error in degrees between unit rows of est and ref.

    The cosine is clamped away from +/-1 before the arccos, and the backward
    uses the clamped value, so the gradient stays finite (norm bounded by
    (180/pi)/sqrt(2e-9) per row) even for exactly aligned pairs.
    """
    est, ref = _wrap(est), _wrap(ref)
    if est.data.shape != ref.data.shape:
        raise ShapeMismatch(f"angular_loss shapes disagree: {est.shape} vs {ref.shape}")
    if est.data.ndim == 1:
        e = est.data[None, :].astype(np.float64)
        r = ref.data[None, :].astype(np.float64)
        single = True
    elif est.data.ndim == 2:
        e = est.data.astype(np.float64)
        r = ref.data.astype(np.float64)
        single = False
    else:
        raise ShapeMismatch(f"angular_loss expects 1-D or 2-D input, got {est.shape}")
    n_rows = e.shape[0]
    d = np.clip(np.sum(e * r, axis=1), -1.0 + ARCCOS_CLAMP, 1.0 - ARCCOS_CLAMP)
    out = np.asarray(np.mean(DEG_PER_RAD * np.arccos(d)))

    def bwd(g):
        coef = -float(g) * DEG_PER_RAD / (np.sqrt(1.0 - d * d) * n_rows)
        ge = coef[:, None] * r
        gr = coef[:, None] * e
        if single:
            ge, gr = ge[0], gr[0]
        return [ge.astype(np.float32), gr.astype(np.float32)]

    return _emit(rec, out, [est, ref], bwd)
