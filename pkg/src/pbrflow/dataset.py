"""Synthetic dataset generation: (image, material triplet) pairs on disk.

Layout: ``<out>/manifest.json`` plus ``<out>/pairs/<id>/{image,albedo,
metallic,roughness,mask}.png``.  Material maps are 16-bit lossless PNG, the
rendered image is 8-bit, the foreground mask is stored alongside because all
evaluation metrics are mask-scoped.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .errors import RejectedInput
from .materials import MaterialTriplet, gen_material
from .render import PointLight, RenderedPair, SceneSpec, render
from .utils import derive_seed


def _write_png16(path: Path, arr: np.ndarray) -> None:
    data = np.round(np.clip(arr, 0.0, 1.0) * 65535.0).astype(np.uint16)
    if data.ndim == 3 and data.shape[2] == 3:
        data = data[:, :, ::-1]  # RGB -> BGR for OpenCV
    elif data.ndim == 3 and data.shape[2] == 1:
        data = data[:, :, 0]
    if not cv2.imwrite(str(path), data):
        raise OSError(f"failed to write {path}")


def _write_png8(path: Path, arr: np.ndarray) -> None:
    data = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    if data.ndim == 3 and data.shape[2] == 3:
        data = data[:, :, ::-1]
    elif data.ndim == 3 and data.shape[2] == 1:
        data = data[:, :, 0]
    if not cv2.imwrite(str(path), data):
        raise OSError(f"failed to write {path}")


def _read_png(path: Path) -> np.ndarray:
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise OSError(f"failed to read {path}")
    if raw.ndim == 3:
        raw = raw[:, :, ::-1]
    scale = 65535.0 if raw.dtype == np.uint16 else 255.0
    arr = raw.astype(np.float32) / scale
    return arr


@dataclass
class DatasetManifest:
    root: Path
    records: list

    @staticmethod
    def load(root: str | Path) -> "DatasetManifest":
        root = Path(root)
        manifest_path = root / "manifest.json"
        if not manifest_path.exists():
            raise OSError(f"no manifest.json under {root}")
        with open(manifest_path, "r", encoding="utf-8") as fh:
            records = json.load(fh)
        return DatasetManifest(root=root, records=records)

    def split(self, name: str) -> list:
        return [r for r in self.records if r["split"] == name]

    def material_groups(self, split_name: str) -> list[list]:
        """Records grouped by material seed, views in order."""
        groups: dict[int, list] = {}
        for r in self.split(split_name):
            groups.setdefault(r["material_seed"], []).append(r)
        out = []
        for seed in sorted(groups):
            out.append(sorted(groups[seed], key=lambda r: r["id"]))
        return out

    def load_pair(self, record: dict):
        """Returns (image H×W×3, MaterialTriplet, mask H×W×1 bool)."""
        pair_dir = self.root / "pairs" / record["id"]
        image = _read_png(pair_dir / "image.png")
        albedo = _read_png(pair_dir / "albedo.png")
        metallic = _read_png(pair_dir / "metallic.png")[..., None]
        roughness = _read_png(pair_dir / "roughness.png")[..., None]
        mask = (_read_png(pair_dir / "mask.png") > 0.5)[..., None]
        return image, MaterialTriplet(albedo, metallic, roughness), mask


def _assign_splits(count: int, seed: int) -> list[str]:
    """90/5/5 split over materials; tiny datasets (< 8) stay all-train."""
    n_val = max(1, round(0.05 * count)) if count >= 8 else 0
    n_test = max(1, round(0.05 * count)) if count >= 8 else 0
    order = np.random.default_rng(derive_seed(seed, 0x5B)).permutation(count)
    splits = ["train"] * count
    for i in order[:n_val]:
        splits[i] = "val"
    for i in order[n_val : n_val + n_test]:
        splits[i] = "test"
    return splits


def _scene_for(material_seed: int, view: int, views_per_material: int) -> SceneSpec:
    """Deterministic scene parameters for one (material, view) pair."""
    rng = np.random.default_rng(derive_seed(material_seed, 0xC4))
    geometry = ["sphere", "sphere", "box", "plane"][int(rng.integers(0, 4))]
    elevation = float(rng.uniform(15.0, 55.0))
    base_az = float(rng.uniform(0.0, 360.0))
    distance = float(rng.uniform(3.0, 3.6))
    use_env = bool(rng.random() < 0.5)
    if use_env:
        env = tuple(float(x) for x in rng.uniform(0.6, 1.0, size=3))
        lights: tuple[PointLight, ...] = ()
    else:
        env = None
        n_lights = int(rng.integers(1, 3))
        lights = tuple(
            PointLight(
                position=tuple(float(x) for x in rng.uniform(-4.0, 4.0, size=2)) + (float(rng.uniform(2.0, 5.0)),),
                intensity=tuple(float(x) for x in rng.uniform(8.0, 20.0, size=3)),
            )
            for _ in range(n_lights)
        )
    azimuth = (base_az + 360.0 * view / views_per_material) % 360.0
    return SceneSpec(
        geometry=geometry,
        azimuth_deg=azimuth,
        elevation_deg=elevation,
        distance=distance,
        lights=lights,
        env_radiance=env,
        view_count=views_per_material,
    )


def render_pair(material_seed: int, view: int, views_per_material: int, resolution: int) -> RenderedPair:
    triplet = gen_material(material_seed, resolution)
    scene = _scene_for(material_seed, view, views_per_material)
    return render(triplet, scene)


def make_dataset(
    count: int,
    seed: int,
    resolution: int,
    views_per_material: int,
    out_path: str | Path,
    overwrite: bool = False,
) -> DatasetManifest:
    """Generate ``count`` materials, each rendered from ``views_per_material``
    viewpoints, and write images + manifest under ``out_path``.

    Materials are split 90/5/5 into train/val/test; all views of one material
    share its split.  Regeneration with identical arguments is bit-identical.
    """
    if count < 1:
        raise RejectedInput(f"count must be >= 1, got {count}")
    if views_per_material < 1:
        raise RejectedInput(f"views_per_material must be >= 1, got {views_per_material}")
    out = Path(out_path)
    if out.exists() and any(out.iterdir()):
        if not overwrite:
            raise RejectedInput(f"{out} is not empty; pass overwrite=True to replace it")
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "pairs").mkdir(exist_ok=True)
    except PermissionError as exc:
        raise OSError(f"cannot create dataset directory {out}: {exc}") from exc

    splits = _assign_splits(count, seed)
    records = []
    for m in range(count):
        material_seed = derive_seed(seed, 0x7E, m)
        triplet = gen_material(material_seed, resolution)
        for view in range(views_per_material):
            scene = _scene_for(material_seed, view, views_per_material)
            pair = render(triplet, scene)
            pair_id = f"{m:04d}_{view:02d}"
            pair_dir = out / "pairs" / pair_id
            pair_dir.mkdir(parents=True, exist_ok=True)
            _write_png8(pair_dir / "image.png", pair.image)
            _write_png16(pair_dir / "albedo.png", triplet.albedo)
            _write_png16(pair_dir / "metallic.png", triplet.metallic)
            _write_png16(pair_dir / "roughness.png", triplet.roughness)
            _write_png8(pair_dir / "mask.png", pair.mask.astype(np.float32))
            records.append(
                {
                    "id": pair_id,
                    "material_seed": int(material_seed),
                    "scene": scene.to_dict(),
                    "split": splits[m],
                    "resolution": resolution,
                }
            )

    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(records, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return DatasetManifest(root=out, records=records)
