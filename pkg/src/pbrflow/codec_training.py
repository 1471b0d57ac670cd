"""Training loops for the two latent codecs."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .ckpt import load_checkpoint, load_state_dict_from_numpy, save_checkpoint, state_dict_to_numpy
from .codecs import (
    AlbedoPathCodec,
    CodecLossWeights,
    MaterialPathCodec,
    PatchDiscriminator,
    discriminator_hinge_loss,
    repeat_channels,
)
from .data import load_split_tensors
from .dataset import DatasetManifest
from .errors import ConfigError
from .perceptual import get_pyramid
from .utils import derive_seed, enable_determinism


@dataclass
class CodecTrainConfig:
    steps: int = 5000
    batch_size: int = 4
    lr: float = 1e-4
    seed: int = 0
    base_width: int = 48
    weights: CodecLossWeights = None
    adv_start_frac: float = 0.1  # discriminator joins after this fraction of steps
    grayscale_mix: float = 0.15  # share of repeated-map batches for the RGB codec
    deterministic: bool = False

    def __post_init__(self):
        if self.weights is None:
            self.weights = CodecLossWeights()


def cosine_lr(base: float, step: int, total: int) -> float:
    return base * 0.5 * (1.0 + math.cos(math.pi * step / max(total, 1)))


def _set_lr(opt: torch.optim.Optimizer, lr: float) -> None:
    for group in opt.param_groups:
        group["lr"] = lr


def train_albedo_codec(manifest: DatasetManifest, cfg: CodecTrainConfig, out_path: str | Path) -> AlbedoPathCodec:
    """Train the shared RGB autoencoder of the albedo path.

    Batches are drawn mostly from rendered images and albedo maps (the
    codec's native RGB content); a small share of channel-repeated metallic
    and roughness maps keeps those encodings usable without specializing the
    codec for them.
    """
    enable_determinism(cfg.deterministic)
    data = load_split_tensors(manifest, "train")
    half_mix = cfg.grayscale_mix / 2.0
    pools = [data["images"], data["albedo"], repeat_channels(data["metallic"]), repeat_channels(data["roughness"])]
    probs = np.array([0.5 - half_mix, 0.5 - half_mix, half_mix, half_mix])

    torch.manual_seed(derive_seed(cfg.seed, 0x10))
    codec = AlbedoPathCodec(base_width=cfg.base_width)
    pyramid = get_pyramid(in_channels=3)
    opt = torch.optim.AdamW(codec.parameters(), lr=cfg.lr, weight_decay=1e-5)
    rng = np.random.default_rng(derive_seed(cfg.seed, 0x11))

    final_loss = float("nan")
    for step in range(cfg.steps):
        _set_lr(opt, cosine_lr(cfg.lr, step, cfg.steps))
        cats = rng.choice(len(pools), size=cfg.batch_size, p=probs)
        batch = torch.cat([pools[c][rng.integers(0, pools[c].shape[0])][None] for c in cats], dim=0)
        recon = codec.decoder(codec.encoder(batch))
        loss = ((recon - batch) ** 2).mean() + cfg.weights.lambda_perc * pyramid.distance(recon, batch)
        opt.zero_grad()
        loss.backward()
        opt.step()
        final_loss = float(loss.detach())

    save_checkpoint(
        out_path,
        {
            "kind": "codec_alb",
            "hyperparams": codec.hyperparams(),
            "state": state_dict_to_numpy(codec),
            "step": cfg.steps,
            "seed": cfg.seed,
            "final_loss": final_loss,
        },
    )
    codec.eval()
    return codec


def train_material_codec(manifest: DatasetManifest, cfg: CodecTrainConfig, out_path: str | Path) -> MaterialPathCodec:
    """Train the unified vector-quantized codec of the material path."""
    enable_determinism(cfg.deterministic)
    data = load_split_tensors(manifest, "train")
    stack = data["stack5"]

    torch.manual_seed(derive_seed(cfg.seed, 0x20))
    codec = MaterialPathCodec(base_width=cfg.base_width)
    disc = PatchDiscriminator(in_ch=5)
    pyramid = get_pyramid(in_channels=5)
    opt = torch.optim.AdamW([p for n, p in codec.named_parameters()], lr=cfg.lr, weight_decay=1e-5)
    d_opt = torch.optim.AdamW(disc.parameters(), lr=cfg.lr, weight_decay=1e-5)
    rng = np.random.default_rng(derive_seed(cfg.seed, 0x21))
    reseed_gen = torch.Generator().manual_seed(derive_seed(cfg.seed, 0x22))
    adv_start = int(cfg.adv_start_frac * cfg.steps)

    final_loss = float("nan")
    for step in range(cfg.steps):
        lr = cosine_lr(cfg.lr, step, cfg.steps)
        _set_lr(opt, lr)
        _set_lr(d_opt, lr)
        idx = rng.integers(0, stack.shape[0], size=cfg.batch_size)
        batch = stack[torch.from_numpy(idx.astype(np.int64))]
        z_e = codec.encode_stack(batch)
        z_st, _, code_idx, commit = codec.vq(z_e)
        recon = codec.decode_latent(z_st)

        rec = ((recon - batch) ** 2).mean()
        perc = pyramid.distance(recon, batch)
        w = cfg.weights
        total = w.lambda_rec * rec + w.lambda_perc * perc + w.lambda_code * commit
        if step >= adv_start:
            total = total + w.lambda_adv * (-disc(recon).mean())
        opt.zero_grad()
        total.backward()
        opt.step()
        codec.vq.ema_update(z_e, code_idx, gen=reseed_gen)

        if step >= adv_start:
            d_loss = discriminator_hinge_loss(disc(batch), disc(recon.detach()))
            d_opt.zero_grad()
            d_loss.backward()
            d_opt.step()
        final_loss = float(total.detach())

    save_checkpoint(
        out_path,
        {
            "kind": "codec_mat",
            "hyperparams": codec.hyperparams(),
            "state": state_dict_to_numpy(codec),
            "step": cfg.steps,
            "seed": cfg.seed,
            "final_loss": final_loss,
        },
    )
    codec.eval()
    return codec


def load_albedo_codec(path: str | Path) -> AlbedoPathCodec:
    try:
        record = load_checkpoint(path)
    except FileNotFoundError as exc:
        raise ConfigError(str(exc)) from exc
    if record.get("kind") != "codec_alb":
        raise ConfigError(f"{path} is not an albedo-path codec checkpoint")
    codec = AlbedoPathCodec(**record["hyperparams"])
    load_state_dict_from_numpy(codec, record["state"])
    codec.eval()
    for p in codec.parameters():
        p.requires_grad_(False)
    return codec


def load_material_codec(path: str | Path) -> MaterialPathCodec:
    try:
        record = load_checkpoint(path)
    except FileNotFoundError as exc:
        raise ConfigError(str(exc)) from exc
    if record.get("kind") != "codec_mat":
        raise ConfigError(f"{path} is not a material-path codec checkpoint")
    codec = MaterialPathCodec(**record["hyperparams"])
    load_state_dict_from_numpy(codec, record["state"])
    codec.eval()
    for p in codec.parameters():
        p.requires_grad_(False)
    return codec
