"""Procedural PBR material triplets (albedo, metallic, roughness)."""
from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np

from .errors import RejectedInput
from .utils import derive_seed

VALID_RESOLUTIONS = (64, 128, 256, 512)


@dataclass
class MaterialTriplet:
    """Ground-truth or predicted PBR maps, all float32 in [0, 1].

    ``albedo`` is H×W×3, ``metallic`` and ``roughness`` are H×W×1.  The
    constructor clamps values into range and rejects non-finite input or
    mismatched shapes.
    """

    albedo: np.ndarray
    metallic: np.ndarray
    roughness: np.ndarray

    def __post_init__(self):
        self.albedo = np.asarray(self.albedo, dtype=np.float32)
        self.metallic = np.asarray(self.metallic, dtype=np.float32)
        self.roughness = np.asarray(self.roughness, dtype=np.float32)
        if self.metallic.ndim == 2:
            self.metallic = self.metallic[..., None]
        if self.roughness.ndim == 2:
            self.roughness = self.roughness[..., None]
        if self.albedo.ndim != 3 or self.albedo.shape[2] != 3:
            raise RejectedInput(f"albedo must be HxWx3, got {self.albedo.shape}")
        for name, arr in (("metallic", self.metallic), ("roughness", self.roughness)):
            if arr.ndim != 3 or arr.shape[2] != 1:
                raise RejectedInput(f"{name} must be HxWx1, got {arr.shape}")
            if arr.shape[:2] != self.albedo.shape[:2]:
                raise RejectedInput(f"{name} spatial shape {arr.shape[:2]} != albedo {self.albedo.shape[:2]}")
        for name, arr in (("albedo", self.albedo), ("metallic", self.metallic), ("roughness", self.roughness)):
            if not np.all(np.isfinite(arr)):
                raise RejectedInput(f"{name} contains non-finite values")
        self.albedo = np.clip(self.albedo, 0.0, 1.0)
        self.metallic = np.clip(self.metallic, 0.0, 1.0)
        self.roughness = np.clip(self.roughness, 0.0, 1.0)

    @property
    def resolution(self) -> int:
        return self.albedo.shape[0]

    def stack5(self) -> np.ndarray:
        """Channel-wise concatenation [albedo, metallic, roughness], H×W×5."""
        return np.concatenate([self.albedo, self.metallic, self.roughness], axis=2)

    @staticmethod
    def from_stack5(arr: np.ndarray) -> "MaterialTriplet":
        if arr.ndim != 3 or arr.shape[2] != 5:
            raise RejectedInput(f"expected HxWx5 stack, got {arr.shape}")
        return MaterialTriplet(arr[..., 0:3], arr[..., 3:4], arr[..., 4:5])

    def allclose(self, other: "MaterialTriplet", atol: float = 0.0) -> bool:
        return (
            np.allclose(self.albedo, other.albedo, atol=atol)
            and np.allclose(self.metallic, other.metallic, atol=atol)
            and np.allclose(self.roughness, other.roughness, atol=atol)
        )


def _smooth_noise(rng: np.random.Generator, resolution: int, cells: int) -> np.ndarray:
    """Single-octave value noise: a coarse random grid upsampled bilinearly."""
    grid = rng.random((cells, cells)).astype(np.float32)
    return cv2.resize(grid, (resolution, resolution), interpolation=cv2.INTER_LINEAR)


def _fractal_noise(rng: np.random.Generator, resolution: int, octaves: int = 3) -> np.ndarray:
    """Multi-octave value noise normalized to [0, 1]."""
    acc = np.zeros((resolution, resolution), dtype=np.float32)
    amp, total = 1.0, 0.0
    for o in range(octaves):
        cells = min(4 * 2**o, resolution)
        acc += amp * _smooth_noise(rng, resolution, cells)
        total += amp
        amp *= 0.5
    acc /= total
    lo, hi = float(acc.min()), float(acc.max())
    if hi - lo < 1e-12:
        return np.zeros_like(acc)
    return (acc - lo) / (hi - lo)


def gen_material(seed: int, resolution: int) -> MaterialTriplet:
    """Generate a deterministic procedural material.

    Albedo mixes smooth noise fields between two random colors; metallic is
    piecewise constant with both a metal-like and a dielectric-like region in
    every sample; roughness is a graded ramp plus mild noise.
    """
    if resolution not in VALID_RESOLUTIONS:
        raise RejectedInput(f"resolution must be one of {VALID_RESOLUTIONS}, got {resolution}")

    rng = np.random.default_rng(derive_seed(seed, 0xA1))

    # Albedo: blend two saturated anchor colors through fractal noise, then a
    # second noise field modulates brightness for texture.
    color_a = rng.uniform(0.1, 0.95, size=3).astype(np.float32)
    color_b = rng.uniform(0.1, 0.95, size=3).astype(np.float32)
    mix = _fractal_noise(rng, resolution)[..., None]
    albedo = color_a * (1.0 - mix) + color_b * mix
    shade = 0.75 + 0.25 * _fractal_noise(rng, resolution)[..., None]
    albedo = np.clip(albedo * shade, 0.0, 1.0)

    # Metallic: threshold a smooth field at its median into two constant
    # regions, one conductor-like and one dielectric-like, so every material
    # contains a metal/dielectric boundary.
    field = _fractal_noise(rng, resolution, octaves=2)
    cut = float(np.median(field))
    hi_val = rng.uniform(0.85, 1.0)
    lo_val = rng.uniform(0.0, 0.12)
    metallic = np.where(field > cut, hi_val, lo_val).astype(np.float32)[..., None]

    # Roughness: oriented linear ramp plus low-amplitude noise.
    theta = rng.uniform(0.0, 2.0 * np.pi)
    ys, xs = np.meshgrid(
        np.linspace(0.0, 1.0, resolution, dtype=np.float32),
        np.linspace(0.0, 1.0, resolution, dtype=np.float32),
        indexing="ij",
    )
    ramp = xs * np.cos(theta) + ys * np.sin(theta)
    ramp = (ramp - ramp.min()) / max(float(ramp.max() - ramp.min()), 1e-12)
    r_lo = rng.uniform(0.05, 0.35)
    r_hi = rng.uniform(0.55, 0.95)
    rough = r_lo + (r_hi - r_lo) * ramp + 0.08 * (_fractal_noise(rng, resolution, octaves=2) - 0.5)
    roughness = np.clip(rough, 0.0, 1.0).astype(np.float32)[..., None]

    return MaterialTriplet(albedo, metallic, roughness)
