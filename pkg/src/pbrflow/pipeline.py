"""Checkpoint loading and end-to-end inference for one or more views."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .codec_training import load_albedo_codec, load_material_codec
from .codecs import AlbedoPathCodec, MaterialPathCodec
from .conditioning import (
    ConditioningBundle,
    SemanticEncoder,
    TokenProjection,
    build_condition,
    load_semantic_encoder,
)
from .errors import ConfigError, RejectedInput
from .flow import SamplerConfig, combine_outputs, sample
from .materials import MaterialTriplet
from .training import load_unet_checkpoint
from .unet import DualUNet
from .utils import derive_seed

ALB_NOISE_STREAM = 0x61
MAT_NOISE_STREAM = 0x62


@dataclass
class ModelBundle:
    alb_codec: AlbedoPathCodec
    mat_codec: MaterialPathCodec
    semantic_encoder: SemanticEncoder
    projection: TokenProjection
    unet_alb: DualUNet
    unet_mat: DualUNet
    multiview: bool = False

    @property
    def train_resolution(self) -> int:
        return self.semantic_encoder.expected_resolution


def load_models(
    ckpt_dir: str | Path,
    unet_alb_name: str = "unet_alb.ckpt",
    unet_mat_name: str = "unet_mat.ckpt",
) -> ModelBundle:
    ckpt_dir = Path(ckpt_dir)
    alb_codec = load_albedo_codec(ckpt_dir / "codec_alb.ckpt")
    mat_codec = load_material_codec(ckpt_dir / "codec_mat.ckpt")
    semantic = load_semantic_encoder(ckpt_dir / "semantic.ckpt")
    alb = load_unet_checkpoint(ckpt_dir / unet_alb_name, expected_kind="unet_alb")
    mat = load_unet_checkpoint(ckpt_dir / unet_mat_name, expected_kind="unet_mat")
    if alb.multiview != mat.multiview:
        raise ConfigError("albedo/material checkpoints disagree on the multi-view flag")
    for p in alb.projection.parameters():
        p.requires_grad_(False)
    return ModelBundle(
        alb_codec=alb_codec,
        mat_codec=mat_codec,
        semantic_encoder=semantic,
        projection=alb.projection,
        unet_alb=alb.unet,
        unet_mat=mat.unet,
        multiview=alb.multiview,
    )


def build_conditions(images: list[np.ndarray], models: ModelBundle) -> ConditioningBundle:
    """One bundle per view, stacked along the batch axis; both paths consume
    the same instance."""
    bundles = [build_condition(img, models.semantic_encoder, models.projection, models.alb_codec) for img in images]
    return ConditioningBundle(
        semantic_tokens=torch.cat([b.semantic_tokens for b in bundles]),
        structure_latent=torch.cat([b.structure_latent for b in bundles]),
    )


def _path_noise(models: ModelBundle, cond: ConditioningBundle, seed: int, stream: int, share: bool):
    b = cond.structure_latent.shape[0]
    h, w = cond.structure_latent.shape[2:]
    channels = {ALB_NOISE_STREAM: models.unet_alb.config.out_channels, MAT_NOISE_STREAM: models.unet_mat.config.out_channels}[stream]
    gen = torch.Generator().manual_seed(derive_seed(seed, stream))
    if share:
        one = torch.randn((1, channels, h, w), generator=gen)
        return one.expand(b, -1, -1, -1).clone()
    return torch.randn((b, channels, h, w), generator=gen)


def estimate_views(
    images: list[np.ndarray],
    models: ModelBundle,
    sampler_cfg: Optional[SamplerConfig] = None,
    seed: int = 0,
    crossview: bool = False,
    share_noise: bool = False,
) -> list[dict]:
    """Dual-path inference over a list of views.

    With ``crossview`` every self-attention layer attends over all views
    jointly; with one view this is exactly single-view inference.  Returns a
    dict per view with combined/alb/mat triplets in input order.
    """
    if not images:
        raise RejectedInput("need at least one view")
    sampler_cfg = sampler_cfg or SamplerConfig()
    views = len(images) if crossview else 1
    cond = build_conditions(images, models)

    z_alb = sample(
        models.unet_alb, cond, sampler_cfg, seed, views=views,
        noise=_path_noise(models, cond, seed, ALB_NOISE_STREAM, share_noise),
    )
    z_mat = sample(
        models.unet_mat, cond, sampler_cfg, seed, views=views,
        noise=_path_noise(models, cond, seed, MAT_NOISE_STREAM, share_noise),
    )
    out = []
    for v in range(len(images)):
        trip_alb = models.alb_codec.decode_triplet(z_alb[v : v + 1])
        trip_mat = models.mat_codec.decode_triplet(z_mat[v : v + 1])
        out.append(
            {
                "combined": combine_outputs(trip_alb, trip_mat),
                "alb": trip_alb,
                "mat": trip_mat,
            }
        )
    return out


def estimate_single(
    image: np.ndarray,
    models: ModelBundle,
    sampler_cfg: Optional[SamplerConfig] = None,
    seed: int = 0,
) -> dict:
    """Single-image estimate; returns combined/alb/mat triplets."""
    return estimate_views([image], models, sampler_cfg=sampler_cfg, seed=seed)[0]


def save_triplet_pngs(triplet: MaterialTriplet, out_dir: str | Path) -> None:
    from .dataset import _write_png16

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_png16(out_dir / "albedo.png", triplet.albedo)
    _write_png16(out_dir / "metallic.png", triplet.metallic)
    _write_png16(out_dir / "roughness.png", triplet.roughness)
