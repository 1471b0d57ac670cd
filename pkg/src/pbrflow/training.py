"""Two-stage denoiser training with cross-path feature distillation.

Stage 1 trains the albedo-path U-Net (plus the semantic token projection)
with the velocity-matching loss.  Stage 2 freezes everything from stage 1
and trains the material-path U-Net; during the first ``fd_cutoff_steps`` its
intermediate features are pulled toward the frozen albedo-path features
through nine learned per-tap projections.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .ckpt import load_checkpoint, load_state_dict_from_numpy, save_checkpoint, state_dict_to_numpy
from .codec_training import cosine_lr
from .codecs import AlbedoPathCodec, MaterialPathCodec
from .conditioning import ConditioningBundle, SemanticEncoder, TokenProjection
from .data import load_split_tensors
from .dataset import DatasetManifest
from .errors import ConfigError, RejectedInput
from .flow import interpolate, velocity_target
from .unet import TAP_COUNT, DualUNet, FeatureTaps, UNetConfig, adapt_io_layers
from .utils import derive_seed, enable_determinism

ALB_LATENT = 12
MAT_LATENT = 14


@dataclass
class TrainSchedule:
    stage1_steps: int = 2000
    stage2_steps: int = 2000
    fd_cutoff_steps: int = 200
    lambda_fd: float = 1.0
    batch_size: int = 4
    lr: float = 1e-4
    seed: int = 0
    deterministic: bool = False

    def __post_init__(self):
        if self.fd_cutoff_steps > self.stage2_steps:
            raise RejectedInput("fd_cutoff_steps must not exceed stage2_steps")
        if self.lambda_fd < 0:
            raise RejectedInput("lambda_fd must be >= 0")


class ProjectionSet(nn.Module):
    """Nine learned per-tap projections: per-pixel linear maps over channels
    (1×1 convolutions), with a bilinear resize safety net if spatial shapes
    ever differ."""

    def __init__(self, mat_channels: list[int], alb_channels: list[int]):
        super().__init__()
        if len(mat_channels) != TAP_COUNT or len(alb_channels) != TAP_COUNT:
            raise RejectedInput(f"expected {TAP_COUNT} tap channel counts")
        self.projections = nn.ModuleList(
            [nn.Conv2d(cm, ca, 1) for cm, ca in zip(mat_channels, alb_channels)]
        )

    def forward(self, tap: torch.Tensor, index: int, target_hw=None) -> torch.Tensor:
        out = self.projections[index](tap)
        if target_hw is not None and tuple(out.shape[2:]) != tuple(target_hw):
            out = F.interpolate(out, size=tuple(target_hw), mode="bilinear", align_corners=False)
        return out


def tap_channel_counts(config: UNetConfig) -> list[int]:
    w = config.widths()
    return [w[0], w[1], w[2], w[3], w[3], w[3], w[2], w[1], w[0]]


def fd_loss(taps_alb, taps_mat, proj: ProjectionSet) -> torch.Tensor:
    """Sum over the nine taps of the mean squared distance between frozen
    albedo-path features and projected material-path features.

    Albedo taps are treated as constants: no gradient reaches their
    producers; gradient flows into the projections and the material path.
    """
    maps_alb = list(taps_alb.maps if isinstance(taps_alb, FeatureTaps) else taps_alb)
    maps_mat = list(taps_mat.maps if isinstance(taps_mat, FeatureTaps) else taps_mat)
    if len(maps_alb) != TAP_COUNT or len(maps_mat) != TAP_COUNT:
        raise RejectedInput(f"expected {TAP_COUNT} taps per path")
    total = None
    for i, (fa, fm) in enumerate(zip(maps_alb, maps_mat)):
        fa = fa.detach()
        pm = proj(fm, i, target_hw=fa.shape[2:])
        term = ((fa - pm) ** 2).mean()
        total = term if total is None else total + term
    return total


class TrainLog:
    """Append-only CSV loss log.  ``total`` is written as exactly
    rf + lambda_fd * fd over the logged float values."""

    HEADER = "step,rf,fd,total,lr,wall_time"

    def __init__(self, path: str | Path | None, deterministic: bool):
        self.path = Path(path) if path is not None else None
        self.deterministic = deterministic
        self._t0 = time.perf_counter()
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text(self.HEADER + "\n", encoding="utf-8")

    def append(self, step: int, rf: float, fd: float, lambda_fd: float, lr: float) -> float:
        total = rf + lambda_fd * fd
        if self.path is not None:
            wall = 0.0 if self.deterministic else time.perf_counter() - self._t0
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(f"{step},{rf!r},{fd!r},{total!r},{lr!r},{wall!r}\n")
        return total


def prepare_training_arrays(
    manifest: DatasetManifest,
    split: str,
    alb_codec: AlbedoPathCodec,
    mat_codec: MaterialPathCodec,
    semantic_encoder: SemanticEncoder,
) -> dict:
    """Precompute every frozen encoding once; training steps then touch only
    the denoisers."""
    data = load_split_tensors(manifest, split)
    with torch.no_grad():
        z_alb, z_mat, structure, feats = [], [], [], []
        n = data["images"].shape[0]
        for start in range(0, n, 8):
            sl = slice(start, start + 8)
            z_alb.append(alb_codec.encode_triplet_tensors(data["albedo"][sl], data["metallic"][sl], data["roughness"][sl]))
            z_e = mat_codec.encode_stack(data["stack5"][sl])
            z_mat.append(mat_codec.vq.quantize(z_e)[0])
            structure.append(alb_codec.encode_image(data["images"][sl]))
            feats.append(semantic_encoder(data["images"][sl]))
    return {
        "z_alb": torch.cat(z_alb),
        "z_mat": torch.cat(z_mat),
        "structure": torch.cat(structure),
        "sem_features": torch.cat(feats),
        "data": data,
    }


def _save_unet_ckpt(path, kind, unet, projection, step, seed, multiview=False, fd_projections=None):
    payload = {
        "kind": kind,
        "config": unet.config.to_dict(),
        "state": state_dict_to_numpy(unet),
        "projection": state_dict_to_numpy(projection),
        "multiview": multiview,
        "step": step,
        "seed": seed,
    }
    if fd_projections is not None:
        payload["fd_projections"] = state_dict_to_numpy(fd_projections)
    save_checkpoint(path, payload)


def load_unet_checkpoint(path: str | Path, expected_kind: str | None = None) -> SimpleNamespace:
    try:
        record = load_checkpoint(path)
    except FileNotFoundError as exc:
        raise ConfigError(str(exc)) from exc
    kind = record.get("kind")
    if expected_kind is not None and kind != expected_kind:
        raise ConfigError(f"{path} holds {kind!r}, expected {expected_kind!r}")
    config = UNetConfig.from_dict(record["config"])
    unet = DualUNet(config)
    load_state_dict_from_numpy(unet, record["state"])
    unet.eval()
    projection = TokenProjection(token_dim=config.token_dim)
    load_state_dict_from_numpy(projection, record["projection"])
    fd_projections = None
    if "fd_projections" in record:
        taps = tap_channel_counts(config)
        fd_projections = ProjectionSet(taps, taps)
        load_state_dict_from_numpy(fd_projections, record["fd_projections"])
    return SimpleNamespace(
        unet=unet,
        projection=projection,
        multiview=bool(record.get("multiview", False)),
        fd_projections=fd_projections,
        kind=kind,
        step=int(record["step"]),
        seed=int(record["seed"]),
    )


def _freeze(module: nn.Module) -> nn.Module:
    for p in module.parameters():
        p.requires_grad_(False)
    module.eval()
    return module


def train_stage1(
    manifest: DatasetManifest,
    schedule: TrainSchedule,
    alb_codec: AlbedoPathCodec,
    mat_codec: MaterialPathCodec,
    semantic_encoder: SemanticEncoder,
    base_config: UNetConfig,
    out_ckpt: str | Path,
    log_path: str | Path | None = None,
) -> SimpleNamespace:
    """Stage 1: train the albedo-path U-Net and the token projection with the
    velocity-matching loss only.  Codecs and semantic encoder stay frozen."""
    enable_determinism(schedule.deterministic)
    _freeze(alb_codec)
    _freeze(semantic_encoder)
    arrays = prepare_training_arrays(manifest, "train", alb_codec, mat_codec, semantic_encoder)

    torch.manual_seed(derive_seed(schedule.seed, 0x40))
    unet = DualUNet(adapt_io_layers(base_config, ALB_LATENT))
    projection = TokenProjection(feature_dim=semantic_encoder.feature_dim, token_dim=base_config.token_dim)
    opt = torch.optim.AdamW(list(unet.parameters()) + list(projection.parameters()), lr=schedule.lr, weight_decay=1e-6)

    rng = np.random.default_rng(derive_seed(schedule.seed, 0x41))
    eps_gen = torch.Generator().manual_seed(derive_seed(schedule.seed, 0x42))
    log = TrainLog(log_path, schedule.deterministic)

    n = arrays["z_alb"].shape[0]
    for step in range(schedule.stage1_steps):
        lr = cosine_lr(schedule.lr, step, schedule.stage1_steps)
        for group in opt.param_groups:
            group["lr"] = lr
        idx = torch.from_numpy(rng.integers(0, n, size=schedule.batch_size).astype(np.int64))
        z_data = arrays["z_alb"][idx]
        t = torch.from_numpy(rng.random(schedule.batch_size).astype(np.float32))
        eps = torch.randn(z_data.shape, generator=eps_gen)
        tokens = projection(arrays["sem_features"][idx])
        cond = ConditioningBundle(tokens, arrays["structure"][idx])

        state = interpolate(z_data, eps, t)
        pred = unet(state.z_t, state.t, cond)
        rf = ((pred.velocity - velocity_target(z_data, eps)) ** 2).mean()
        opt.zero_grad()
        rf.backward()
        opt.step()
        log.append(step, float(rf.detach()), 0.0, schedule.lambda_fd, lr)

    _save_unet_ckpt(out_ckpt, "unet_alb", unet, projection, schedule.stage1_steps, schedule.seed)
    unet.eval()
    return SimpleNamespace(unet=unet, projection=projection, multiview=False)


def train_stage2(
    manifest: DatasetManifest,
    schedule: TrainSchedule,
    ckpt_alb: str | Path,
    alb_codec: AlbedoPathCodec,
    mat_codec: MaterialPathCodec,
    semantic_encoder: SemanticEncoder,
    base_config: UNetConfig,
    out_ckpt: str | Path,
    log_path: str | Path | None = None,
) -> SimpleNamespace:
    """Stage 2: train the material-path U-Net from scratch against the frozen
    stage-1 network.

    Each step draws one (image, triplet, t, eps-per-path) configuration; both
    paths see the same t, noise is drawn independently per latent space.  The
    total loss is rf + lambda_fd * fd before ``fd_cutoff_steps`` and rf alone
    afterwards (fd is then reported as exactly 0)."""
    enable_determinism(schedule.deterministic)
    stage1 = load_unet_checkpoint(ckpt_alb, expected_kind="unet_alb")
    _freeze(stage1.unet)
    _freeze(stage1.projection)
    _freeze(alb_codec)
    _freeze(mat_codec)
    _freeze(semantic_encoder)
    arrays = prepare_training_arrays(manifest, "train", alb_codec, mat_codec, semantic_encoder)
    with torch.no_grad():
        tokens_all = stage1.projection(arrays["sem_features"])
    alb_before = state_dict_to_numpy(stage1.unet)

    torch.manual_seed(derive_seed(schedule.seed, 0x50))
    unet_mat = DualUNet(adapt_io_layers(base_config, MAT_LATENT))
    taps = tap_channel_counts(base_config)
    fd_projections = ProjectionSet(taps, taps)
    opt = torch.optim.AdamW(
        list(unet_mat.parameters()) + list(fd_projections.parameters()), lr=schedule.lr, weight_decay=1e-6
    )

    rng = np.random.default_rng(derive_seed(schedule.seed, 0x51))
    eps_gen_alb = torch.Generator().manual_seed(derive_seed(schedule.seed, 0x52))
    eps_gen_mat = torch.Generator().manual_seed(derive_seed(schedule.seed, 0x53))
    log = TrainLog(log_path, schedule.deterministic)

    n = arrays["z_mat"].shape[0]
    for step in range(schedule.stage2_steps):
        lr = cosine_lr(schedule.lr, step, schedule.stage2_steps)
        for group in opt.param_groups:
            group["lr"] = lr
        idx = torch.from_numpy(rng.integers(0, n, size=schedule.batch_size).astype(np.int64))
        t = torch.from_numpy(rng.random(schedule.batch_size).astype(np.float32))
        cond = ConditioningBundle(tokens_all[idx], arrays["structure"][idx])

        z_mat = arrays["z_mat"][idx]
        eps_mat = torch.randn(z_mat.shape, generator=eps_gen_mat)
        state_mat = interpolate(z_mat, eps_mat, t)
        pred_mat = unet_mat(state_mat.z_t, state_mat.t, cond)
        rf = ((pred_mat.velocity - velocity_target(z_mat, eps_mat)) ** 2).mean()

        use_fd = step < schedule.fd_cutoff_steps
        if use_fd:
            z_alb = arrays["z_alb"][idx]
            eps_alb = torch.randn(z_alb.shape, generator=eps_gen_alb)
            state_alb = interpolate(z_alb, eps_alb, t)
            with torch.no_grad():
                taps_alb = stage1.unet(state_alb.z_t, state_alb.t, cond).taps
            fd = fd_loss(taps_alb, pred_mat.taps, fd_projections)
            total = rf + schedule.lambda_fd * fd
            fd_val = float(fd.detach())
        else:
            # noise stream consumed anyway so the rf trajectory does not
            # depend on where the cutoff falls
            torch.randn(arrays["z_alb"][idx].shape, generator=eps_gen_alb)
            total = rf
            fd_val = 0.0

        opt.zero_grad()
        total.backward()
        opt.step()
        log.append(step, float(rf.detach()), fd_val, schedule.lambda_fd, lr)

    alb_after = state_dict_to_numpy(stage1.unet)
    if any(not np.array_equal(alb_after[k], alb_before[k]) for k in alb_before):
        raise RuntimeError("stage-1 network changed during stage 2")

    _save_unet_ckpt(
        out_ckpt,
        "unet_mat",
        unet_mat,
        stage1.projection,
        schedule.stage2_steps,
        schedule.seed,
        fd_projections=fd_projections,
    )
    unet_mat.eval()
    return SimpleNamespace(unet=unet_mat, projection=stage1.projection, fd_projections=fd_projections, multiview=False)


def probe_feature_distance(
    unet_alb: DualUNet,
    unet_mat: DualUNet,
    fd_projections: ProjectionSet,
    projection: TokenProjection,
    arrays: dict,
    seed: int = 0,
    n_draws: int = 8,
) -> float:
    """Mean fd_loss over a fixed probe configuration; used to compare
    distillation-on and distillation-off runs."""
    rng = np.random.default_rng(seed)
    eps_gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        tokens_all = projection(arrays["sem_features"])
    n = arrays["z_alb"].shape[0]
    vals = []
    with torch.no_grad():
        for _ in range(n_draws):
            idx = torch.from_numpy(rng.integers(0, n, size=4).astype(np.int64))
            t = torch.from_numpy(rng.random(4).astype(np.float32))
            cond = ConditioningBundle(tokens_all[idx], arrays["structure"][idx])
            z_alb = arrays["z_alb"][idx]
            z_mat = arrays["z_mat"][idx]
            eps_alb = torch.randn(z_alb.shape, generator=eps_gen)
            eps_mat = torch.randn(z_mat.shape, generator=eps_gen)
            taps_a = unet_alb(interpolate(z_alb, eps_alb, t).z_t, t, cond).taps
            taps_m = unet_mat(interpolate(z_mat, eps_mat, t).z_t, t, cond).taps
            vals.append(float(fd_loss(taps_a, taps_m, fd_projections)))
    return float(np.mean(vals))
