"""Differentiable piecewise-linear brightness tone curve.

The curve maps relative brightness u in [0, 1] through L equal-width ramp
segments with nonnegative weights theta. With uniform weights it is exactly
the identity, so perturbing theta away from uniform is a pure brightness
distortion that preserves chromaticity.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .color_core import BrightnessMap, LinearImage, brightness_map

DEFAULT_SEGMENTS = 32
THETA_FLOOR = 1e-3
# Denominator floor for the per-pixel gain curve_value(u) / u.
GAIN_DENOM_FLOOR = 1e-4
_DOMAIN_SLACK = 1e-9

# Counts public curve evaluations; lets training tests assert that the
# baseline path never touches the curve.
_eval_count = 0


def curve_eval_count() -> int:
    return _eval_count


def reset_curve_eval_count() -> None:
    global _eval_count
    _eval_count = 0


def _bump() -> None:
    global _eval_count
    _eval_count += 1


class DomainError(ValueError):
    """Curve input outside [0, 1] beyond numerical slack."""


@dataclass(frozen=True)
class CurveParams:
    """Segment weights theta (length L, float64). The curve value is
    sum_j clamp(L*u - j, 0, 1) * theta_j / sum(theta)."""

    theta: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.theta, dtype=np.float64)
        if arr.ndim != 1 or arr.shape[0] < 1:
            raise ValueError(f"theta must be a nonempty 1-D array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("theta must be finite")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "theta", arr)

    @property
    def segments(self) -> int:
        return self.theta.shape[0]

    @property
    def prefix(self) -> np.ndarray:
        """Length-(L+1) cumulative weights T_j = sum of theta[:j]."""
        return np.concatenate(([0.0], np.cumsum(self.theta)))

    @property
    def total(self) -> float:
        # Sequential cumulative total, consistent with `prefix`, so the
        # curve hits exactly 1 at u = 1.
        return float(self.prefix[-1])

    @classmethod
    def identity(cls, segments: int = DEFAULT_SEGMENTS) -> "CurveParams":
        """Uniform weights 1/L: the exact identity curve."""
        if segments < 1:
            raise ValueError("segments must be >= 1")
        return cls(np.full(segments, 1.0 / segments))

    def to_json(self, path: str | Path) -> None:
        payload = {"L": self.segments, "theta": [float(t) for t in self.theta]}
        Path(path).write_text(json.dumps(payload, indent=2) + "\n")

    @classmethod
    def from_json(cls, path: str | Path) -> "CurveParams":
        payload = json.loads(Path(path).read_text())
        theta = np.asarray(payload["theta"], dtype=np.float64)
        if int(payload["L"]) != theta.shape[0]:
            raise ValueError("curve file L does not match theta length")
        return cls(theta)


def _check_domain(u: np.ndarray) -> np.ndarray:
    if u.size and (u.min() < -_DOMAIN_SLACK or u.max() > 1.0 + _DOMAIN_SLACK):
        raise DomainError("curve input must lie in [0, 1]")
    return np.clip(u, 0.0, 1.0)


def _ramp_basis(u: np.ndarray, segments: int) -> np.ndarray:
    """clamp(L*u - j, 0, 1) for j = 0..L-1, appended as a trailing axis."""
    return np.clip(segments * u[..., None] - np.arange(segments, dtype=np.float64), 0.0, 1.0)


def segment_split(u: np.ndarray, segments: int) -> tuple[np.ndarray, np.ndarray]:
    """Segment index k = floor(L*u) (clipped to [0, L-1]) and the fractional
    position f = clamp(L*u - k, 0, 1) within that segment."""
    lu = segments * u
    k = np.clip(np.floor(lu), 0, segments - 1)
    f = np.clip(lu - k, 0.0, 1.0)
    return k.astype(np.intp), f


def _value_raw(u: np.ndarray, params: CurveParams) -> np.ndarray:
    """Unnormalized curve value T_k + f*theta_k == sum_j clamp(L*u-j,0,1)*theta_j.

    Only the active segment contributes fractionally, so a prefix-sum gather
    gives the full ramp-basis contraction in O(1) per sample.
    """
    k, f = segment_split(u, params.segments)
    return params.prefix[k] + f * params.theta[k]


def curve_value(u, params: CurveParams):
    """Evaluate the curve at u (scalar or array); float64 result.

    Monotone in u, with curve_value(0) = 0 and curve_value(1) = 1.
    """
    _bump()
    total = params.total
    if total <= 0.0:
        raise ValueError("curve weights must have positive total")
    arr = _check_domain(np.asarray(u, dtype=np.float64))
    out = _value_raw(arr, params) / total
    if np.isscalar(u) or np.ndim(u) == 0:
        return float(out)
    return out


def curve_param_grad(u, params: CurveParams):
    """d curve_value / d theta_j at u; shape = u.shape + (L,).

    The normalization by sum(theta) makes the gradient
    (clamp(L*u - j, 0, 1) - curve_value(u)) / sum(theta), which is zero at
    the identity-invariant direction: sum_j theta_j * grad_j = 0.
    """
    total = params.total
    if total <= 0.0:
        raise ValueError("curve weights must have positive total")
    arr = _check_domain(np.asarray(u, dtype=np.float64))
    basis = _ramp_basis(arr, params.segments)
    value = _value_raw(arr, params) / total
    out = (basis - value[..., None]) / total
    if np.isscalar(u) or np.ndim(u) == 0:
        return out.reshape(params.segments)
    return out


def project_params(params: CurveParams, floor: float = THETA_FLOOR) -> CurveParams:
    """Clamp every weight up to the positivity floor."""
    return CurveParams(np.maximum(params.theta, floor))


def control_points(params: CurveParams) -> np.ndarray:
    """(L+1, 2) polyline vertices (j/L, T_j / T_L) with T_j the prefix sums."""
    total = params.total
    if total <= 0.0:
        raise ValueError("curve weights must have positive total")
    prefix = np.concatenate([[0.0], np.cumsum(params.theta)]) / total
    xs = np.arange(params.segments + 1, dtype=np.float64) / params.segments
    return np.stack([xs, prefix], axis=1)


def apply_curve(img: LinearImage, params: CurveParams) -> LinearImage:
    """Rescale each pixel by curve_value(u) / max(u, floor); chromaticity-safe.

    u is the image's own brightness map, so uniform weights reproduce the
    input exactly wherever u clears the denominator floor.
    """
    _bump()
    u = brightness_map(img).values.astype(np.float64)
    gain = _gain_from_brightness(u, params)
    out = img.data.astype(np.float64) * gain[..., None]
    return LinearImage(np.clip(out, 0.0, None).astype(np.float32))


def apply_curve_batch(batch: np.ndarray, u: np.ndarray, params: CurveParams) -> np.ndarray:
    """Batched curve filter for (N, 3, H, W) arrays given precomputed
    brightness maps u (N, H, W); returns float32."""
    _bump()
    gain = _gain_from_brightness(u, params)
    out = batch.astype(np.float64) * gain[:, None, :, :]
    return np.clip(out, 0.0, None).astype(np.float32)


def _gain_from_brightness(u: np.ndarray, params: CurveParams) -> np.ndarray:
    total = params.total
    if total <= 0.0:
        raise ValueError("curve weights must have positive total")
    value = _value_raw(np.clip(u, 0.0, 1.0), params)
    return (value / total) / np.maximum(u, GAIN_DENOM_FLOOR)
