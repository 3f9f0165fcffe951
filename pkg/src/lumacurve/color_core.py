"""Linear-RGB image model and illuminant math.

Images are H x W x 3 rasters of nonnegative linear radiometric values
(float32). Illuminants are unit-norm nonnegative RGB directions; estimators
and ground truth are compared by angular error in degrees.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

# Clamp applied to arccos arguments before differentiation; forward
# evaluation of exactly (anti)parallel vectors short-circuits to 0/180.
ARCCOS_CLAMP = 1e-9


class ZeroVector(ValueError):
    """Normalization of a (near-)zero vector was requested."""


class DegenerateIlluminant(ValueError):
    """An illuminant channel is too close to zero to divide by."""


class ShapeMismatch(ValueError):
    """Array shapes disagree where exact agreement is required."""


@dataclass(frozen=True)
class LinearImage:
    """Immutable H x W x 3 raster of finite, nonnegative float32 values."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ShapeMismatch(f"expected an HxWx3 array, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("image must contain at least one pixel")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image values must be finite")
        if arr.min() < 0.0:
            raise ValueError("image values must be nonnegative")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class Illuminant:
    """Unit-norm, componentwise-nonnegative RGB direction (float64)."""

    rgb: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.rgb, dtype=np.float64)
        if arr.shape != (3,):
            raise ShapeMismatch(f"expected a 3-vector, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("illuminant components must be finite")
        if arr.min() < 0.0:
            raise ValueError("illuminant components must be nonnegative")
        norm = float(np.sqrt(np.sum(arr * arr)))
        if abs(norm - 1.0) > 1e-6:
            raise ValueError(f"illuminant must be unit norm, got {norm!r}")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "rgb", arr)


@dataclass(frozen=True)
class BrightnessMap:
    """Per-pixel relative brightness in [0, 1] (float32, H x W)."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float32)
        if arr.ndim != 2:
            raise ShapeMismatch(f"expected an HxW array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("brightness values must be finite")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("brightness values must lie in [0, 1]")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)


def brightness_map(img: LinearImage) -> BrightnessMap:
    """Channel-mean brightness normalized by the image-wide maximum.

    An all-black image maps to all zeros rather than dividing by zero.
    """
    mean = img.data.astype(np.float64).mean(axis=2)
    peak = mean.max()
    if peak <= 0.0:
        return BrightnessMap(np.zeros(mean.shape, dtype=np.float32))
    u = mean / peak
    # Guard float32 rounding at the peak pixel.
    return BrightnessMap(np.clip(u, 0.0, 1.0).astype(np.float32))


def batch_brightness(batch: np.ndarray) -> np.ndarray:
    """Brightness maps for an (N, 3, H, W) batch; float64 (N, H, W) output.

    Same definition as :func:`brightness_map`, normalized per image.
    """
    if batch.ndim != 4 or batch.shape[1] != 3:
        raise ShapeMismatch(f"expected an (N, 3, H, W) batch, got {batch.shape}")
    mean = batch.astype(np.float64).mean(axis=1)
    peak = mean.max(axis=(1, 2), keepdims=True)
    safe = np.where(peak > 0.0, peak, 1.0)
    u = np.where(peak > 0.0, mean / safe, 0.0)
    return np.clip(u, 0.0, 1.0)


def normalize_illuminant(v: np.ndarray) -> Illuminant:
    """Project a nonnegative RGB vector onto the unit sphere."""
    arr = np.asarray(v, dtype=np.float64)
    if arr.shape != (3,):
        raise ShapeMismatch(f"expected a 3-vector, got shape {arr.shape}")
    norm = float(np.sqrt(np.sum(arr * arr)))
    if norm < 1e-12:
        raise ZeroVector("cannot normalize a zero illuminant vector")
    return Illuminant(arr / norm)


def angular_error(a: Illuminant, b: Illuminant) -> float:
    """Angle between two illuminant directions, in degrees.

    Exactly equal (or exactly opposite) vectors return exactly 0 (or 180);
    otherwise the cosine is clamped away from +/-1 by ``ARCCOS_CLAMP`` so the
    value stays strictly positive for distinct directions.
    """
    if np.array_equal(a.rgb, b.rgb):
        return 0.0
    if np.array_equal(a.rgb, -b.rgb):
        return 180.0
    d = float(np.dot(a.rgb, b.rgb))
    d = min(max(d, -1.0 + ARCCOS_CLAMP), 1.0 - ARCCOS_CLAMP)
    return float(np.degrees(np.arccos(d)))


def angular_error_rows(est: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Rowwise angular error in degrees between (N, 3) unit-vector arrays."""
    e = np.asarray(est, dtype=np.float64)
    r = np.asarray(ref, dtype=np.float64)
    if e.shape != r.shape or e.ndim != 2 or e.shape[1] != 3:
        raise ShapeMismatch(f"expected matching (N, 3) arrays, got {e.shape} and {r.shape}")
    d = np.sum(e * r, axis=1)
    out = np.degrees(np.arccos(np.clip(d, -1.0 + ARCCOS_CLAMP, 1.0 - ARCCOS_CLAMP)))
    out[np.all(e == r, axis=1)] = 0.0
    out[np.all(e == -r, axis=1)] = 180.0
    return out


def von_kries_correct(img: LinearImage, e: Illuminant) -> LinearImage:
    """Divide each channel by sqrt(3) * e_c so a neutral cast maps to itself."""
    gains = np.sqrt(3.0) * e.rgb
    if gains.min() < 1e-6:
        raise DegenerateIlluminant("illuminant channel too small for von Kries division")
    out = img.data.astype(np.float64) / gains
    return LinearImage(out.astype(np.float32))


def resize_area(img: LinearImage, height: int, width: int) -> LinearImage:
    """Area-average resampling to an arbitrary target resolution."""
    if height < 1 or width < 1:
        raise ValueError("target resolution must be positive")
    if (img.height, img.width) == (height, width):
        return img
    wr = _area_weights(img.height, height)
    wc = _area_weights(img.width, width)
    out = np.einsum("ah,hwc,bw->abc", wr, img.data.astype(np.float64), wc)
    return LinearImage(np.clip(out, 0.0, None).astype(np.float32))


def _area_weights(src: int, dst: int) -> np.ndarray:
    """(dst, src) row-stochastic matrix of pixel-interval overlap fractions."""
    w = np.zeros((dst, src), dtype=np.float64)
    scale = src / dst
    for i in range(dst):
        lo = i * scale
        hi = (i + 1) * scale
        j0 = int(np.floor(lo))
        j1 = min(src, int(np.ceil(hi)))
        for j in range(j0, j1):
            w[i, j] = min(hi, j + 1.0) - max(lo, float(j))
    return w / scale


# ---------------------------------------------------------------------------
# PFM I/O: 3-channel Portable Float Map, scanlines stored bottom-to-top,
# scale-sign encodes endianness (negative = little-endian).
# ---------------------------------------------------------------------------


class PFMError(ValueError):
    """Malformed PFM header or truncated pixel data."""


def save_pfm(img: LinearImage, path: str | Path) -> None:
    """Write a color PFM file (little-endian, scale -1.0)."""
    path = Path(path)
    rows = np.flipud(img.data).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(b"PF\n")
        fh.write(f"{img.width} {img.height}\n".encode("ascii"))
        fh.write(b"-1.0\n")
        fh.write(rows.tobytes())


def load_pfm(path: str | Path) -> LinearImage:
    """Read a color PFM file into a LinearImage."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = _read_token(fh)
        if magic != b"PF":
            raise PFMError(f"not a color PFM file (magic {magic!r})")
        try:
            width = int(_read_token(fh))
            height = int(_read_token(fh))
            scale = float(_read_token(fh))
        except ValueError as exc:
            raise PFMError(f"malformed PFM header in {path}") from exc
        if width < 1 or height < 1 or scale == 0.0:
            raise PFMError(f"invalid PFM dimensions/scale in {path}")
        count = width * height * 3
        dtype = "<f4" if scale < 0.0 else ">f4"
        raw = fh.read(count * 4)
        if len(raw) != count * 4:
            raise PFMError(f"truncated PFM pixel data in {path}")
    data = np.frombuffer(raw, dtype=dtype).reshape(height, width, 3)
    if abs(scale) != 1.0:
        data = data * abs(scale)
    return LinearImage(np.flipud(data).astype(np.float32))


def _read_token(fh) -> bytes:
    """Read one whitespace-delimited ASCII token."""
    token = b""
    while True:
        ch = fh.read(1)
        if ch == b"":
            raise PFMError("unexpected end of PFM header")
        if ch.isspace():
            if token:
                return token
            continue
        token += ch
