"""Cross-view attention: fine-tuning and joint multi-view inference.

Every self-attention layer can operate over the concatenated token
sequences of all views of a group (see ``unet.SelfAttention``); this module
adds the layer-level operation used by tests, the fine-tuning stage that
adapts single-view checkpoints, and the joint inference path.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from types import SimpleNamespace
from typing import Optional

import numpy as np
import torch

from .codecs import AlbedoPathCodec, MaterialPathCodec
from .conditioning import ConditioningBundle, SemanticEncoder
from .data import load_split_tensors
from .dataset import DatasetManifest
from .errors import ConfigError, RejectedInput
from .flow import SamplerConfig, interpolate, velocity_target
from .materials import MaterialTriplet
from .pipeline import ModelBundle, estimate_views
from .training import TrainLog, TrainSchedule, _freeze, _save_unet_ckpt, load_unet_checkpoint, prepare_training_arrays
from .unet import SelfAttention
from .utils import derive_seed, enable_determinism


@dataclass
class ViewBatch:
    """V same-resolution views of one object."""

    images: list[np.ndarray]

    def __post_init__(self):
        if len(self.images) < 1:
            raise RejectedInput("need at least one view")
        shapes = {img.shape for img in self.images}
        if len(shapes) != 1:
            raise RejectedInput(f"all views must share one resolution, got {shapes}")

    def __len__(self):
        return len(self.images)


def crossview_attention(layer: SelfAttention, tokens: torch.Tensor) -> torch.Tensor:
    """Joint attention over per-view token sequences using the layer's own
    projections: concatenate along the token axis, attend, split back.

    ``tokens`` is (V, T, C); the result keeps that shape.  With V == 1 this
    is numerically the layer's ordinary token attention.
    """
    if tokens.ndim != 3:
        raise RejectedInput(f"expected V,T,C token tensor, got {tuple(tokens.shape)}")
    v, t, c = tokens.shape
    joint = tokens.reshape(1, v * t, c)
    out = layer.attend_tokens(joint)
    return out.reshape(v, t, c)


def finetune_multiview(
    manifest: DatasetManifest,
    schedule: TrainSchedule,
    ckpt_alb: str | Path,
    ckpt_mat: str | Path,
    alb_codec: AlbedoPathCodec,
    mat_codec: MaterialPathCodec,
    semantic_encoder: SemanticEncoder,
    out_ckpt_alb: str | Path,
    out_ckpt_mat: str | Path,
    steps: Optional[int] = None,
    log_path: str | Path | None = None,
) -> SimpleNamespace:
    """Fine-tune both single-view networks with cross-view attention enabled.

    The dataset must provide view groups (``views_per_material`` views of the
    same material); the loss is the two rectified-flow objectives over all
    views of the sampled groups.  All views of a group share the same t so
    joint attention compares features at one noise level, as at inference.
    """
    enable_determinism(schedule.deterministic)
    stage1 = load_unet_checkpoint(ckpt_alb, expected_kind="unet_alb")
    stage2 = load_unet_checkpoint(ckpt_mat, expected_kind="unet_mat")
    _freeze(stage1.projection)
    _freeze(alb_codec)
    _freeze(mat_codec)
    _freeze(semantic_encoder)

    groups = manifest.material_groups("train")
    if not groups:
        raise ConfigError("training split has no view groups")
    view_counts = {len(g) for g in groups}
    if len(view_counts) != 1:
        raise ConfigError(f"inconsistent views per material in training split: {sorted(view_counts)}")
    n_views = view_counts.pop()

    arrays = prepare_training_arrays(manifest, "train", alb_codec, mat_codec, semantic_encoder)
    id_to_row = {rid: i for i, rid in enumerate(arrays["data"]["ids"])}
    group_rows = [[id_to_row[r["id"]] for r in g] for g in groups]
    with torch.no_grad():
        tokens_all = stage1.projection(arrays["sem_features"])

    unet_alb, unet_mat = stage1.unet.train(), stage2.unet.train()
    for p in unet_alb.parameters():
        p.requires_grad_(True)
    for p in unet_mat.parameters():
        p.requires_grad_(True)
    steps = schedule.stage2_steps if steps is None else steps
    opt = torch.optim.AdamW(
        list(unet_alb.parameters()) + list(unet_mat.parameters()), lr=schedule.lr, weight_decay=1e-6
    )
    rng = np.random.default_rng(derive_seed(schedule.seed, 0x80))
    eps_gen = torch.Generator().manual_seed(derive_seed(schedule.seed, 0x81))
    log = TrainLog(log_path, schedule.deterministic)

    groups_per_step = max(1, schedule.batch_size // n_views)
    for step in range(steps):
        picked = rng.integers(0, len(group_rows), size=groups_per_step)
        rows = torch.tensor([r for g in picked for r in group_rows[g]], dtype=torch.long)
        t_groups = rng.random(groups_per_step).astype(np.float32)
        t = torch.from_numpy(np.repeat(t_groups, n_views))
        cond = ConditioningBundle(tokens_all[rows], arrays["structure"][rows])

        z_alb = arrays["z_alb"][rows]
        z_mat = arrays["z_mat"][rows]
        eps_alb = torch.randn(z_alb.shape, generator=eps_gen)
        eps_mat = torch.randn(z_mat.shape, generator=eps_gen)
        pred_a = unet_alb(interpolate(z_alb, eps_alb, t).z_t, t, cond, views=n_views)
        pred_m = unet_mat(interpolate(z_mat, eps_mat, t).z_t, t, cond, views=n_views)
        rf = ((pred_a.velocity - velocity_target(z_alb, eps_alb)) ** 2).mean() + (
            (pred_m.velocity - velocity_target(z_mat, eps_mat)) ** 2
        ).mean()
        opt.zero_grad()
        rf.backward()
        opt.step()
        log.append(step, float(rf.detach()), 0.0, 0.0, schedule.lr)

    _save_unet_ckpt(out_ckpt_alb, "unet_alb", unet_alb, stage1.projection, steps, schedule.seed, multiview=True)
    _save_unet_ckpt(
        out_ckpt_mat, "unet_mat", unet_mat, stage1.projection, steps, schedule.seed,
        multiview=True, fd_projections=stage2.fd_projections,
    )
    unet_alb.eval()
    unet_mat.eval()
    return SimpleNamespace(unet_alb=unet_alb, unet_mat=unet_mat, projection=stage1.projection)


def estimate_multiview(
    views: ViewBatch,
    models: ModelBundle,
    sampler_cfg: Optional[SamplerConfig] = None,
    seed: int = 0,
    share_noise: bool = False,
) -> list[MaterialTriplet]:
    """Joint sampling with cross-view self-attention; one combined triplet
    per view, in input order.  With one view this reduces exactly to
    single-view inference."""
    results = estimate_views(
        list(views.images), models, sampler_cfg=sampler_cfg, seed=seed, crossview=True, share_noise=share_noise
    )
    return [r["combined"] for r in results]
