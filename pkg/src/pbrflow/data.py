"""Bridging helpers: dataset records -> in-memory torch tensors."""
from __future__ import annotations

import numpy as np
import torch

from .dataset import DatasetManifest
from .errors import ConfigError


def load_split_tensors(manifest: DatasetManifest, split: str) -> dict:
    """Load a whole split into channel-first float32 tensors.

    Desk-scale datasets fit in memory comfortably, which keeps every
    training loop free of loader nondeterminism.
    """
    records = manifest.split(split)
    if not records:
        raise ConfigError(f"split {split!r} is empty")
    images, albedo, metallic, roughness, masks, ids = [], [], [], [], [], []
    for rec in records:
        img, trip, mask = manifest.load_pair(rec)
        images.append(img.transpose(2, 0, 1))
        albedo.append(trip.albedo.transpose(2, 0, 1))
        metallic.append(trip.metallic.transpose(2, 0, 1))
        roughness.append(trip.roughness.transpose(2, 0, 1))
        masks.append(mask.transpose(2, 0, 1))
        ids.append(rec["id"])
    out = {
        "images": torch.from_numpy(np.stack(images).astype(np.float32)),
        "albedo": torch.from_numpy(np.stack(albedo).astype(np.float32)),
        "metallic": torch.from_numpy(np.stack(metallic).astype(np.float32)),
        "roughness": torch.from_numpy(np.stack(roughness).astype(np.float32)),
        "masks": torch.from_numpy(np.stack(masks)),
        "ids": ids,
        "records": records,
    }
    out["stack5"] = torch.cat([out["albedo"], out["metallic"], out["roughness"]], dim=1)
    return out
