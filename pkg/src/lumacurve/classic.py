"""Classical statistics-based illuminant estimators.

One unified routine covers the familiar family: a per-channel Minkowski-p
mean of (optionally Gaussian-smoothed, optionally gradient-magnitude)
values, normalized to a unit direction. Gray-world, white-patch,
shades-of-gray, and gray-edge are fixed (n, p, sigma) corners of it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .color_core import Illuminant, LinearImage, normalize_illuminant


class BlackImage(ValueError):
    """Every channel statistic vanished; no direction can be estimated."""


@dataclass(frozen=True)
class ClassicConfig:
    """n: derivative order (0 or 1); p: Minkowski norm (>= 1, math.inf for
    max); sigma: Gaussian pre-smoothing scale (0 disables)."""

    n: int = 0
    p: float = 1.0
    sigma: float = 0.0

    def __post_init__(self):
        if self.n not in (0, 1):
            raise ValueError(f"derivative order must be 0 or 1, got {self.n}")
        if not (self.p >= 1.0):
            raise ValueError(f"Minkowski order must be >= 1, got {self.p}")
        if not (self.sigma >= 0.0):
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")


def estimate_unified(img: LinearImage, cfg: ClassicConfig) -> Illuminant:
    """Per-channel Minkowski statistic of |d^n (G_sigma * f)|, normalized."""
    chans = img.data.astype(np.float64)
    if cfg.sigma > 0.0:
        # Separable Gaussian, truncated at 3 sigma, replicate border.
        chans = gaussian_filter1d(chans, cfg.sigma, axis=0, mode="nearest", truncate=3.0)
        chans = gaussian_filter1d(chans, cfg.sigma, axis=1, mode="nearest", truncate=3.0)
    if cfg.n == 1:
        fields = np.stack([_gradient_magnitude(chans[:, :, c]) for c in range(3)], axis=2)
    else:
        fields = np.abs(chans)
    stats = _minkowski_stats(fields, cfg.p)
    if not np.any(stats > 0.0):
        raise BlackImage("all channel statistics are zero")
    return normalize_illuminant(stats)


def _gradient_magnitude(chan: np.ndarray) -> np.ndarray:
    """Central-difference gradient magnitude with replicate border."""
    padded = np.pad(chan, 1, mode="edge")
    dx = (padded[1:-1, 2:] - padded[1:-1, :-2]) / 2.0
    dy = (padded[2:, 1:-1] - padded[:-2, 1:-1]) / 2.0
    return np.hypot(dx, dy)


def _minkowski_stats(fields: np.ndarray, p: float) -> np.ndarray:
    """Per-channel Minkowski-p mean of an (H, W, 3) nonnegative field."""
    if math.isinf(p):
        return fields.max(axis=(0, 1))
    if p == 1.0:
        return fields.mean(axis=(0, 1))
    # Rescale by the global peak so large p cannot overflow.
    peak = fields.max()
    if peak <= 0.0:
        return np.zeros(3)
    scaled = fields / peak
    return peak * np.power(np.power(scaled, p).mean(axis=(0, 1)), 1.0 / p)


def gray_world(img: LinearImage) -> Illuminant:
    """Mean pixel value per channel (n=0, p=1, sigma=0)."""
    return estimate_unified(img, ClassicConfig(0, 1.0, 0.0))


def white_patch(img: LinearImage) -> Illuminant:
    """Per-channel maximum (n=0, p=inf, sigma=0)."""
    return estimate_unified(img, ClassicConfig(0, math.inf, 0.0))


def shades_of_gray(img: LinearImage, p: float) -> Illuminant:
    """Minkowski-p mean of pixel values (n=0, sigma=0)."""
    return estimate_unified(img, ClassicConfig(0, p, 0.0))


def gray_edge(img: LinearImage, p: float, sigma: float) -> Illuminant:
    """Minkowski-p mean of smoothed gradient magnitudes (n=1)."""
    return estimate_unified(img, ClassicConfig(1, p, sigma))
