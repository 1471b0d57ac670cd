"""Latent codecs for the two estimation paths.

The albedo path encodes each material component independently through a
shared RGB autoencoder (single-channel maps are channel-repeated first),
giving a 12-channel latent: channels 0-3 albedo, 4-7 metallic, 8-11
roughness.  The material path encodes the full 5-channel triplet jointly
into a 14-channel vector-quantized latent.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import RejectedInput
from .materials import MaterialTriplet
from .perceptual import RandomFeaturePyramid, get_pyramid

DOWNSAMPLE_FACTOR = 8
ALB_LATENT_CHANNELS = 12
MAT_LATENT_CHANNELS = 14
RGB_LATENT_CHANNELS = 4
CODEBOOK_SIZE = 512


def repeat_channels(x):
    """Tile a single-channel map to three identical channels.

    Accepts H×W×1 (or H×W) numpy arrays and B×1×H×W torch tensors.
    """
    if isinstance(x, torch.Tensor):
        if x.ndim != 4 or x.shape[1] != 1:
            raise RejectedInput(f"expected B,1,H,W tensor, got {tuple(x.shape)}")
        return x.repeat(1, 3, 1, 1)
    x = np.asarray(x)
    if x.ndim == 2:
        x = x[..., None]
    if x.ndim != 3 or x.shape[2] != 1:
        raise RejectedInput(f"expected single-channel H,W,1 map, got {x.shape}")
    return np.repeat(x, 3, axis=2)


def _norm(ch: int) -> nn.GroupNorm:
    return nn.GroupNorm(min(8, ch), ch)


class ConvResBlock(nn.Module):
    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.norm1 = _norm(cin)
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.norm2 = _norm(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else nn.Identity()

    def forward(self, x):
        h = self.conv1(F.silu(self.norm1(x)))
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class Encoder(nn.Module):
    """Three stride-2 stages (spatial factor 8).  Residual capacity sits at
    the half resolution and below; the full-resolution stem stays light so
    the codec trains within the desk CPU budget."""

    def __init__(self, in_ch: int, latent_ch: int, base: int):
        super().__init__()
        half = max(base // 2, 8)
        b2 = base * 2
        self.net = nn.Sequential(
            nn.Conv2d(in_ch, half, 3, padding=1),
            nn.SiLU(),
            nn.Conv2d(half, base, 3, stride=2, padding=1),
            ConvResBlock(base, base),
            nn.Conv2d(base, b2, 3, stride=2, padding=1),
            ConvResBlock(b2, b2),
            nn.Conv2d(b2, b2, 3, stride=2, padding=1),
            ConvResBlock(b2, b2),
            _norm(b2),
            nn.SiLU(),
            nn.Conv2d(b2, latent_ch, 3, padding=1),
        )

    def forward(self, x):
        return self.net(x)


class Decoder(nn.Module):
    def __init__(self, latent_ch: int, out_ch: int, base: int):
        super().__init__()
        half = max(base // 2, 8)
        b2 = base * 2
        self.net = nn.Sequential(
            nn.Conv2d(latent_ch, b2, 3, padding=1),
            ConvResBlock(b2, b2),
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(b2, b2, 3, padding=1),
            ConvResBlock(b2, b2),
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(b2, base, 3, padding=1),
            ConvResBlock(base, base),
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(base, half, 3, padding=1),
            _norm(half),
            nn.SiLU(),
            nn.Conv2d(half, out_ch, 3, padding=1),
        )

    def forward(self, z):
        return self.net(z)


def _check_spatial(h: int, w: int):
    if h % DOWNSAMPLE_FACTOR or w % DOWNSAMPLE_FACTOR:
        raise RejectedInput(f"spatial dims must be divisible by {DOWNSAMPLE_FACTOR}, got {h}x{w}")


def triplet_to_tensors(t: MaterialTriplet):
    """(albedo B,3,H,W; metallic B,1,H,W; roughness B,1,H,W), batch of one."""
    to = lambda a: torch.from_numpy(np.ascontiguousarray(a.astype(np.float32))).permute(2, 0, 1)[None]
    return to(t.albedo), to(t.metallic), to(t.roughness)


def tensor5_to_triplet(x: torch.Tensor) -> MaterialTriplet:
    if x.ndim != 4 or x.shape[0] != 1 or x.shape[1] != 5:
        raise RejectedInput(f"expected 1,5,H,W tensor, got {tuple(x.shape)}")
    arr = x[0].detach().cpu().numpy().transpose(1, 2, 0)
    arr = np.clip(arr, 0.0, 1.0)
    return MaterialTriplet(arr[..., 0:3], arr[..., 3:4], arr[..., 4:5])


class AlbedoPathCodec(nn.Module):
    """RGB autoencoder applied per material component (albedo path)."""

    def __init__(self, base_width: int = 48, latent_channels: int = RGB_LATENT_CHANNELS):
        super().__init__()
        self.base_width = base_width
        self.latent_channels = latent_channels
        self.encoder = Encoder(3, latent_channels, base_width)
        self.decoder = Decoder(latent_channels, 3, base_width)

    def hyperparams(self) -> dict:
        return {"base_width": self.base_width, "latent_channels": self.latent_channels}

    def encode_image(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != 3:
            raise RejectedInput(f"expected B,3,H,W image, got {tuple(x.shape)}")
        _check_spatial(x.shape[2], x.shape[3])
        return self.encoder(x)

    def decode_image(self, z: torch.Tensor) -> torch.Tensor:
        if z.ndim != 4 or z.shape[1] != self.latent_channels:
            raise RejectedInput(f"expected B,{self.latent_channels},h,w latent, got {tuple(z.shape)}")
        return self.decoder(z)

    def encode_triplet_tensors(self, albedo, metallic, roughness) -> torch.Tensor:
        """Concatenated per-component encodings: albedo, metallic, roughness order."""
        z_a = self.encode_image(albedo)
        z_m = self.encode_image(repeat_channels(metallic))
        z_r = self.encode_image(repeat_channels(roughness))
        return torch.cat([z_a, z_m, z_r], dim=1)

    def encode_triplet(self, t: MaterialTriplet) -> torch.Tensor:
        return self.encode_triplet_tensors(*triplet_to_tensors(t))

    def decode_latent(self, z: torch.Tensor) -> torch.Tensor:
        """12-channel latent -> B,5,H,W material stack (unclamped).

        Albedo comes from its decoded RGB; metallic and roughness are the
        mean over the three decoded channels of their groups.
        """
        if z.ndim != 4 or z.shape[1] != ALB_LATENT_CHANNELS:
            raise RejectedInput(f"expected B,{ALB_LATENT_CHANNELS},h,w latent, got {tuple(z.shape)}")
        c = self.latent_channels
        albedo = self.decode_image(z[:, 0:c])
        metallic = self.decode_image(z[:, c : 2 * c]).mean(dim=1, keepdim=True)
        roughness = self.decode_image(z[:, 2 * c : 3 * c]).mean(dim=1, keepdim=True)
        return torch.cat([albedo, metallic, roughness], dim=1)

    def decode_triplet(self, z: torch.Tensor) -> MaterialTriplet:
        with torch.no_grad():
            return tensor5_to_triplet(self.decode_latent(z))


@dataclass
class CodebookState:
    """Snapshot of the vector-quantizer codebook."""

    entries: np.ndarray  # K x D
    usage: np.ndarray  # K, cumulative assignment counts

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=np.float32)
        self.usage = np.asarray(self.usage, dtype=np.int64)
        if not np.isfinite(self.entries).all():
            raise RejectedInput("codebook entries contain non-finite values")
        if (self.usage < 0).any():
            raise RejectedInput("codebook usage counts must be >= 0")


def nearest_entries(vectors: torch.Tensor, entries: torch.Tensor) -> torch.Tensor:
    """Index of the closest codebook entry per row (squared euclidean)."""
    d = (
        vectors.pow(2).sum(1, keepdim=True)
        - 2.0 * vectors @ entries.t()
        + entries.pow(2).sum(1)[None, :]
    )
    return d.argmin(dim=1)


class VectorQuantizerEMA(nn.Module):
    """EMA-updated codebook with straight-through gradients.

    Entries that receive no assignments for ``dead_steps`` consecutive
    updates are re-seeded from the current batch of encoder outputs.
    """

    def __init__(
        self,
        num_entries: int = CODEBOOK_SIZE,
        dim: int = MAT_LATENT_CHANNELS,
        decay: float = 0.99,
        eps: float = 1e-5,
        dead_steps: int = 1000,
        init_seed: int = 7,
    ):
        super().__init__()
        self.num_entries = num_entries
        self.dim = dim
        self.decay = decay
        self.eps = eps
        self.dead_steps = dead_steps
        gen = torch.Generator().manual_seed(init_seed)
        embed = torch.randn(num_entries, dim, generator=gen) * 0.5
        self.register_buffer("embed", embed)
        self.register_buffer("ema_cluster", torch.ones(num_entries))
        self.register_buffer("ema_sum", embed.clone())
        self.register_buffer("usage", torch.zeros(num_entries, dtype=torch.long))
        self.register_buffer("steps_unused", torch.zeros(num_entries, dtype=torch.long))

    def _flatten(self, z: torch.Tensor) -> torch.Tensor:
        # B,D,H,W -> (B*H*W),D
        return z.permute(0, 2, 3, 1).reshape(-1, self.dim)

    def quantize(self, z: torch.Tensor):
        """Snap each spatial vector to its nearest entry.  Returns
        (quantized tensor, flat indices)."""
        if z.ndim != 4 or z.shape[1] != self.dim:
            raise RejectedInput(f"expected B,{self.dim},H,W latent, got {tuple(z.shape)}")
        flat = self._flatten(z)
        idx = nearest_entries(flat, self.embed)
        z_q = self.embed[idx].view(z.shape[0], z.shape[2], z.shape[3], self.dim).permute(0, 3, 1, 2)
        return z_q, idx

    def forward(self, z_e: torch.Tensor):
        """Returns (straight-through latent, hard quantized latent, indices,
        commitment loss)."""
        z_q, idx = self.quantize(z_e)
        commit = ((z_e - z_q.detach()) ** 2).mean()
        z_st = z_e + (z_q - z_e).detach()
        return z_st, z_q, idx, commit

    @torch.no_grad()
    def ema_update(self, z_e: torch.Tensor, idx: torch.Tensor, gen: torch.Generator | None = None):
        flat = self._flatten(z_e.detach())
        counts = torch.bincount(idx, minlength=self.num_entries).float()
        sums = torch.zeros_like(self.ema_sum)
        sums.index_add_(0, idx, flat)

        self.ema_cluster.mul_(self.decay).add_(counts, alpha=1.0 - self.decay)
        self.ema_sum.mul_(self.decay).add_(sums, alpha=1.0 - self.decay)
        n = self.ema_cluster.sum()
        smoothed = (self.ema_cluster + self.eps) / (n + self.num_entries * self.eps) * n
        self.embed.copy_(self.ema_sum / smoothed[:, None])

        used = counts > 0
        self.usage.add_(counts.long())
        self.steps_unused[used] = 0
        self.steps_unused[~used] += 1

        dead = self.steps_unused >= self.dead_steps
        if dead.any():
            n_dead = int(dead.sum())
            if gen is None:
                gen = torch.Generator().manual_seed(0)
            pick = torch.randint(0, flat.shape[0], (n_dead,), generator=gen)
            fresh = flat[pick]
            self.embed[dead] = fresh
            self.ema_sum[dead] = fresh
            self.ema_cluster[dead] = 1.0
            self.steps_unused[dead] = 0

    def export_state(self) -> CodebookState:
        return CodebookState(entries=self.embed.cpu().numpy().copy(), usage=self.usage.cpu().numpy().copy())


class MaterialPathCodec(nn.Module):
    """Unified vector-quantized codec over the 5-channel material stack."""

    def __init__(
        self,
        base_width: int = 48,
        latent_channels: int = MAT_LATENT_CHANNELS,
        codebook_size: int = CODEBOOK_SIZE,
        vq_dead_steps: int = 1000,
    ):
        super().__init__()
        self.base_width = base_width
        self.latent_channels = latent_channels
        self.encoder = Encoder(5, latent_channels, base_width)
        self.vq = VectorQuantizerEMA(num_entries=codebook_size, dim=latent_channels, dead_steps=vq_dead_steps)
        self.decoder = Decoder(latent_channels, 5, base_width)

    def hyperparams(self) -> dict:
        return {
            "base_width": self.base_width,
            "latent_channels": self.latent_channels,
            "codebook_size": self.vq.num_entries,
            "vq_dead_steps": self.vq.dead_steps,
        }

    def encode_stack(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != 5:
            raise RejectedInput(f"expected B,5,H,W material stack, got {tuple(x.shape)}")
        _check_spatial(x.shape[2], x.shape[3])
        return self.encoder(x)

    def encode_triplet(self, t: MaterialTriplet) -> torch.Tensor:
        """Quantized latent; every spatial vector is a codebook entry."""
        a, m, r = triplet_to_tensors(t)
        z_e = self.encode_stack(torch.cat([a, m, r], dim=1))
        z_q, _ = self.vq.quantize(z_e)
        return z_q

    def decode_latent(self, z: torch.Tensor) -> torch.Tensor:
        if z.ndim != 4 or z.shape[1] != self.latent_channels:
            raise RejectedInput(f"expected B,{self.latent_channels},h,w latent, got {tuple(z.shape)}")
        return self.decoder(z)

    def decode_triplet(self, z: torch.Tensor) -> MaterialTriplet:
        with torch.no_grad():
            return tensor5_to_triplet(self.decode_latent(z))


class PatchDiscriminator(nn.Module):
    """Three-layer patch discriminator for the adversarial codec term."""

    def __init__(self, in_ch: int = 5, base: int = 32):
        super().__init__()
        # GELU keeps the generator-side adversarial term smooth
        self.net = nn.Sequential(
            nn.Conv2d(in_ch, base, 4, stride=2, padding=1),
            nn.GELU(),
            nn.Conv2d(base, base * 2, 4, stride=2, padding=1),
            nn.GELU(),
            nn.Conv2d(base * 2, 1, 3, padding=1),
        )

    def forward(self, x):
        return self.net(x)


def discriminator_hinge_loss(d_real: torch.Tensor, d_fake: torch.Tensor) -> torch.Tensor:
    return F.relu(1.0 - d_real).mean() + F.relu(1.0 + d_fake).mean()


@dataclass
class CodecLossWeights:
    lambda_rec: float = 1.0
    lambda_perc: float = 0.001
    lambda_adv: float = 0.01
    lambda_code: float = 0.1

    def __post_init__(self):
        for name in ("lambda_rec", "lambda_perc", "lambda_adv", "lambda_code"):
            if getattr(self, name) < 0:
                raise RejectedInput(f"{name} must be >= 0")
        if self.lambda_rec <= 0:
            raise RejectedInput("lambda_rec must be > 0")


def _as_stack5(x) -> torch.Tensor:
    if isinstance(x, MaterialTriplet):
        a, m, r = triplet_to_tensors(x)
        return torch.cat([a, m, r], dim=1)
    if isinstance(x, torch.Tensor) and x.ndim == 4 and x.shape[1] == 5:
        return x
    raise RejectedInput("expected a MaterialTriplet or a B,5,H,W tensor")


def codec_loss(
    pred,
    target,
    encoder_output: torch.Tensor | None,
    codebook: CodebookState,
    weights: CodecLossWeights,
    perceptual_net: RandomFeaturePyramid | None = None,
    discriminator: PatchDiscriminator | None = None,
):
    """Multi-objective codec loss.

    Returns (total, components) where components holds the unweighted
    reconstruction / perceptual / adversarial / commitment terms and the
    total is their weighted sum.  The adversarial term is 0 when no
    discriminator is supplied (warm-up phase); the commitment term is 0 when
    ``encoder_output`` is None.
    """
    p = _as_stack5(pred)
    t = _as_stack5(target)
    if p.shape != t.shape:
        raise RejectedInput(f"pred/target shape mismatch: {tuple(p.shape)} vs {tuple(t.shape)}")

    rec = ((p - t) ** 2).mean()

    if perceptual_net is None:
        perceptual_net = get_pyramid(in_channels=5)
    perc = perceptual_net.distance(p, t)

    if discriminator is not None:
        adv = -discriminator(p).mean()
    else:
        adv = torch.zeros((), dtype=p.dtype)

    if encoder_output is not None:
        entries = torch.as_tensor(codebook.entries, dtype=encoder_output.dtype)
        flat = encoder_output.permute(0, 2, 3, 1).reshape(-1, entries.shape[1])
        idx = nearest_entries(flat, entries)
        code = ((flat - entries[idx]) ** 2).mean()
    else:
        code = torch.zeros((), dtype=p.dtype)

    total = (
        weights.lambda_rec * rec
        + weights.lambda_perc * perc
        + weights.lambda_adv * adv
        + weights.lambda_code * code
    )
    return total, {"rec": rec, "perc": perc, "adv": adv, "code": code}
