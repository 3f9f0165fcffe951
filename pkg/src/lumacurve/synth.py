"""Synthetic brightness-robustness dataset.

Scenes are top-down orthographic views of a unit ground plane carrying a
grid of matte reflectance patches and a few spheres (optionally glossy).
Each scene is lit by an ambient term and one point light that shares the
ambient chromaticity; the point light moves around a fixed ring, so images
that differ only in position index differ only in their brightness field,
never in ground-truth illuminant. Even position indices go to the train
split, odd ones to test.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .color_core import Illuminant, LinearImage, save_pfm, load_pfm, resize_area

RING_RADIUS = 0.7
RING_HEIGHT = 1.0
SHININESS = 32.0
AMBIENT_RANGE = (0.05, 0.3)
CHROMA_RANGE = (0.2, 0.45)


@dataclass(frozen=True)
class SphereSpec:
    center: tuple[float, float, float]
    radius: float
    reflectance: tuple[float, float, float]
    specular_weight: float = 0.0

    def __post_init__(self):
        if not (self.radius > 0.0):
            raise ValueError(f"sphere radius must be positive, got {self.radius}")
        if min(self.reflectance) <= 0.0 or max(self.reflectance) > 1.0:
            raise ValueError("sphere reflectance must lie in (0, 1]")
        if self.specular_weight < 0.0:
            raise ValueError("specular weight must be nonnegative")


@dataclass(frozen=True)
class SceneSpec:
    """Reflectance patch grid (K, K, 3) plus spheres above the plane."""

    patches: np.ndarray
    spheres: tuple[SphereSpec, ...]

    def __post_init__(self):
        arr = np.asarray(self.patches, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[0] != arr.shape[1] or arr.shape[2] != 3:
            raise ValueError(f"patches must be (K, K, 3), got {arr.shape}")
        if arr.min() <= 0.0 or arr.max() > 1.0:
            raise ValueError("patch reflectances must lie in (0, 1]")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "patches", arr)
        object.__setattr__(self, "spheres", tuple(self.spheres))


@dataclass(frozen=True)
class LightingSpec:
    """Shared-chromaticity ambient + ring point light."""

    illuminant: Illuminant
    position_index: int
    n_positions: int = 8
    ambient: float = 0.15
    point_intensity: float = 1.0

    def __post_init__(self):
        if not (0 <= self.position_index < self.n_positions):
            raise ValueError(
                f"position index {self.position_index} outside 0..{self.n_positions - 1}"
            )
        if self.ambient < 0.0 or self.point_intensity < 0.0:
            raise ValueError("light intensities must be nonnegative")


def light_position(index: int, count: int = 8,
                   radius: float = RING_RADIUS, height: float = RING_HEIGHT) -> np.ndarray:
    """Evenly spaced ring positions around the scene center, fixed height."""
    if not (0 <= index < count):
        raise ValueError(f"position index {index} outside 0..{count - 1}")
    angle = 2.0 * np.pi * index / count
    return np.array([0.5 + radius * np.cos(angle), 0.5 + radius * np.sin(angle), height])


def random_scene(rng: np.random.Generator, grid: int = 4,
                 max_spheres: int = 3) -> SceneSpec:
    """Sample patch reflectances and 1..max_spheres spheres."""
    patches = rng.uniform(0.05, 0.95, size=(grid, grid, 3))
    n_spheres = int(rng.integers(1, max_spheres + 1))
    spheres = []
    for _ in range(n_spheres):
        center = (float(rng.uniform(0.2, 0.8)), float(rng.uniform(0.2, 0.8)),
                  float(rng.uniform(0.12, 0.3)))
        radius = float(rng.uniform(0.08, 0.18))
        reflectance = tuple(rng.uniform(0.05, 0.95, size=3))
        glossy = rng.uniform() < 0.2
        specular = float(rng.uniform(0.05, 0.3)) if glossy else 0.0
        spheres.append(SphereSpec(center, radius, reflectance, specular))
    return SceneSpec(patches, tuple(spheres))


def sample_illuminant(rng: np.random.Generator) -> Illuminant:
    """Chromaticity with r, b ~ U(0.2, 0.45) and g = 1 - r - b, normalized."""
    r = rng.uniform(*CHROMA_RANGE)
    b = rng.uniform(*CHROMA_RANGE)
    g = 1.0 - r - b
    v = np.array([r, g, b])
    return Illuminant(v / np.sqrt(np.sum(v * v)))


def render(scene: SceneSpec, lighting: LightingSpec,
           resolution: int = 64) -> tuple[LinearImage, Illuminant]:
    """Shade the scene: ambient + point-light Lambertian term with 1/d^2
    falloff, plus a Blinn specular lobe on glossy spheres. No shadows."""
    if resolution < 1:
        raise ValueError("resolution must be positive")
    coords = (np.arange(resolution) + 0.5) / resolution
    px, py = np.meshgrid(coords, coords, indexing="xy")

    # Surface buffers, floor first; spheres overwrite where they are higher.
    k = scene.patches.shape[0]
    pi = np.minimum((px * k).astype(int), k - 1)
    pj = np.minimum((py * k).astype(int), k - 1)
    albedo = scene.patches[pj, pi, :].copy()
    height = np.zeros_like(px)
    normal = np.zeros((resolution, resolution, 3))
    normal[:, :, 2] = 1.0
    gloss = np.zeros_like(px)

    for sphere in scene.spheres:
        cx, cy, cz = sphere.center
        rr = sphere.radius ** 2 - (px - cx) ** 2 - (py - cy) ** 2
        hit = rr > 0.0
        if not np.any(hit):
            continue
        z_top = np.where(hit, cz + np.sqrt(np.maximum(rr, 0.0)), -np.inf)
        take = hit & (z_top > height)
        height = np.where(take, z_top, height)
        for c in range(3):
            albedo[:, :, c] = np.where(take, sphere.reflectance[c], albedo[:, :, c])
        surf = np.stack([px - cx, py - cy, np.where(take, z_top, height) - cz], axis=2)
        sn = surf / sphere.radius
        normal = np.where(take[:, :, None], sn, normal)
        gloss = np.where(take, sphere.specular_weight, gloss)

    light = light_position(lighting.position_index, lighting.n_positions)
    to_light = light[None, None, :] - np.stack([px, py, height], axis=2)
    d2 = np.sum(to_light * to_light, axis=2)
    ldir = to_light / np.sqrt(d2)[:, :, None]
    ndotl = np.maximum(0.0, np.sum(normal * ldir, axis=2))
    shading = lighting.ambient + lighting.point_intensity * ndotl / d2

    half = ldir + np.array([0.0, 0.0, 1.0])[None, None, :]
    half /= np.sqrt(np.sum(half * half, axis=2))[:, :, None]
    ndoth = np.maximum(0.0, np.sum(normal * half, axis=2))
    specular = lighting.point_intensity * np.power(ndoth, SHININESS) / d2

    radiance = albedo * shading[:, :, None] + (gloss * specular)[:, :, None]
    pixels = lighting.illuminant.rgb[None, None, :] * radiance
    return LinearImage(pixels.astype(np.float32)), lighting.illuminant


# ---------------------------------------------------------------------------
# Manifest + generation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ManifestRecord:
    image: str
    illuminant: tuple[float, float, float]
    scene: int
    illuminant_id: int
    position: int
    split: str

    def as_dict(self) -> dict:
        return {
            "image": self.image,
            "illuminant": list(self.illuminant),
            "scene": self.scene,
            "illuminant_id": self.illuminant_id,
            "position": self.position,
            "split": self.split,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ManifestRecord":
        return cls(
            image=str(d["image"]),
            illuminant=tuple(float(v) for v in d["illuminant"]),
            scene=int(d["scene"]),
            illuminant_id=int(d["illuminant_id"]),
            position=int(d["position"]),
            split=str(d["split"]),
        )

    def label(self) -> Illuminant:
        return Illuminant(np.asarray(self.illuminant))


@dataclass
class DatasetManifest:
    """JSON-lines record list plus the directory paths are relative to."""

    root: Path
    records: list[ManifestRecord]

    def split(self, name: str) -> list[ManifestRecord]:
        return [r for r in self.records if r.split == name]

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        lines = [json.dumps(r.as_dict()) for r in self.records]
        path.write_text("\n".join(lines) + "\n")
        return path


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    records = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if line:
            records.append(ManifestRecord.from_dict(json.loads(line)))
    return DatasetManifest(root=path.parent, records=records)


def generate_dataset(out_dir: str | Path, seed: int = 0, n_scenes: int = 20,
                     n_illuminants: int = 5, n_positions: int = 8,
                     resolution: int = 64) -> DatasetManifest:
    """Render scenes x illuminants x ring positions into out_dir.

    One shared set of illuminant chromaticities is used for every scene.
    Ambient brightness is resampled per rendered image from a record-keyed
    generator, so regeneration is byte-identical regardless of ordering.
    """
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    illums = [sample_illuminant(np.random.default_rng([seed, 1, i]))
              for i in range(n_illuminants)]
    scenes = [random_scene(np.random.default_rng([seed, 2, s]))
              for s in range(n_scenes)]

    records = []
    for s, scene in enumerate(scenes):
        for i, illum in enumerate(illums):
            for p in range(n_positions):
                rec_rng = np.random.default_rng([seed, 3, s, i, p])
                ambient = float(rec_rng.uniform(*AMBIENT_RANGE))
                lighting = LightingSpec(illum, p, n_positions, ambient=ambient)
                img, label = render(scene, lighting, resolution)
                rel = f"images/s{s:02d}_i{i}_p{p}.pfm"
                save_pfm(img, out_dir / rel)
                records.append(ManifestRecord(
                    image=rel,
                    illuminant=tuple(float(v) for v in label.rgb),
                    scene=s,
                    illuminant_id=i,
                    position=p,
                    split="train" if p % 2 == 0 else "test",
                ))
    manifest = DatasetManifest(root=out_dir, records=records)
    manifest.save(out_dir / "manifest.jsonl")
    return manifest


def load_images(manifest: DatasetManifest, records: list[ManifestRecord] | None = None,
                input_size: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Load records as an (N, 3, S, S) float32 batch plus (N, 3) labels."""
    records = manifest.records if records is None else records
    if not records:
        raise ValueError("no records to load")
    images = []
    labels = []
    for rec in records:
        img = load_pfm(manifest.root / rec.image)
        if input_size is not None and (img.height, img.width) != (input_size, input_size):
            img = resize_area(img, input_size, input_size)
        images.append(img.data.transpose(2, 0, 1))
        labels.append(rec.illuminant)
    return np.ascontiguousarray(np.stack(images)), np.asarray(labels, dtype=np.float64)
