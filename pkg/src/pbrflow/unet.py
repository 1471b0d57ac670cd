"""Velocity-predicting denoising U-Nets.

Both estimation paths use the same interior architecture: four down levels,
one middle block, four up levels (channel multipliers over a shared base
width), self+cross attention at the two coarsest levels, and FiLM time
modulation in every residual block.  Only the first and last convolutions
differ between paths, adapting to each latent space's channel count.  Every
forward pass records nine feature taps (one per level plus the middle) used
for cross-path distillation.

Self-attention layers optionally attend across views: token sequences from
all views of a group are concatenated, attended jointly, and split back.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import torch
import torch.nn as nn
import torch.nn.functional as F

from .conditioning import ConditioningBundle
from .errors import RejectedInput

STRUCTURE_CHANNELS = 4
TAP_COUNT = 9


@dataclass(frozen=True)
class UNetConfig:
    in_channels: int
    out_channels: int
    base_width: int = 64
    channel_mults: tuple[int, int, int, int] = (1, 2, 2, 4)
    attention_levels: tuple[int, ...] = (2, 3)
    token_dim: int = 256
    num_heads: int = 4
    time_embed_dim: int = 256

    def __post_init__(self):
        if len(self.channel_mults) != 4:
            raise RejectedInput("exactly four down levels are required")
        if any(l not in (0, 1, 2, 3) for l in self.attention_levels):
            raise RejectedInput("attention levels must index the four down levels")

    def widths(self) -> list[int]:
        return [self.base_width * m for m in self.channel_mults]

    def to_dict(self) -> dict:
        return {
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "base_width": self.base_width,
            "channel_mults": tuple(self.channel_mults),
            "attention_levels": tuple(self.attention_levels),
            "token_dim": self.token_dim,
            "num_heads": self.num_heads,
            "time_embed_dim": self.time_embed_dim,
        }

    @staticmethod
    def from_dict(d: dict) -> "UNetConfig":
        d = dict(d)
        d["channel_mults"] = tuple(d["channel_mults"])
        d["attention_levels"] = tuple(d["attention_levels"])
        return UNetConfig(**d)


def adapt_io_layers(config: UNetConfig, latent_channels: int, structure_channels: int = STRUCTURE_CHANNELS) -> UNetConfig:
    """Fit a base config to one path's latent space: the first convolution
    accepts latent+structure channels, the last emits latent channels, all
    interior stages untouched."""
    return replace(config, in_channels=latent_channels + structure_channels, out_channels=latent_channels)


@dataclass
class FeatureTaps:
    """The nine per-block feature maps of one forward pass, in fixed order:
    down levels 0-3, middle, up levels 3-0."""

    maps: list

    def __post_init__(self):
        if len(self.maps) != TAP_COUNT:
            raise RejectedInput(f"expected {TAP_COUNT} feature taps, got {len(self.maps)}")

    def __len__(self):
        return len(self.maps)

    def __iter__(self):
        return iter(self.maps)

    def __getitem__(self, i):
        return self.maps[i]


@dataclass
class VelocityPrediction:
    velocity: torch.Tensor
    taps: FeatureTaps

    def __post_init__(self):
        if not torch.isfinite(self.velocity).all():
            raise RejectedInput("velocity contains non-finite values")


def sinusoidal_time_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Continuous t in [0,1] mapped onto sin/cos features."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=t.dtype, device=t.device) / max(half - 1, 1)
    )
    args = t[:, None] * 1000.0 * freqs[None, :]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


def _norm(ch: int) -> nn.GroupNorm:
    return nn.GroupNorm(min(8, ch), ch)


class FiLMResBlock(nn.Module):
    def __init__(self, cin: int, cout: int, temb_dim: int):
        super().__init__()
        self.norm1 = _norm(cin)
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.temb_proj = nn.Linear(temb_dim, 2 * cout)
        self.norm2 = _norm(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else nn.Identity()

    def forward(self, x, temb):
        h = self.conv1(F.silu(self.norm1(x)))
        scale, shift = self.temb_proj(F.silu(temb))[:, :, None, None].chunk(2, dim=1)
        h = self.norm2(h) * (1.0 + scale) + shift
        h = self.conv2(F.silu(h))
        return h + self.skip(x)


def _heads_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, heads: int) -> torch.Tensor:
    """softmax(QK^T/sqrt(d)) V over (B, T, C) tensors, multi-head."""
    b, tq, c = q.shape
    tk = k.shape[1]
    dh = c // heads
    q = q.view(b, tq, heads, dh).transpose(1, 2)
    k = k.view(b, tk, heads, dh).transpose(1, 2)
    v = v.view(b, tk, heads, dh).transpose(1, 2)
    attn = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(dh), dim=-1)
    out = attn @ v
    return out.transpose(1, 2).reshape(b, tq, c)


class SelfAttention(nn.Module):
    """Spatial self-attention; with ``views`` > 1 the token sequences of all
    views in a group are concatenated before attention and split after."""

    def __init__(self, channels: int, heads: int):
        super().__init__()
        if channels % heads:
            raise RejectedInput(f"channels {channels} not divisible by heads {heads}")
        self.heads = heads
        self.norm = _norm(channels)
        self.to_qkv = nn.Linear(channels, 3 * channels)
        self.proj = nn.Linear(channels, channels)

    def attend_tokens(self, tokens: torch.Tensor) -> torch.Tensor:
        """Attention over an explicit (B, T, C) token sequence using this
        layer's projections (no normalization, no residual)."""
        q, k, v = self.to_qkv(tokens).chunk(3, dim=-1)
        return self.proj(_heads_attention(q, k, v, self.heads))

    def forward(self, x: torch.Tensor, views: int = 1) -> torch.Tensor:
        b, c, h, w = x.shape
        tokens = self.norm(x).permute(0, 2, 3, 1).reshape(b, h * w, c)
        if views > 1:
            if b % views:
                raise RejectedInput(f"batch {b} not divisible by view count {views}")
            tokens = tokens.reshape(b // views, views * h * w, c)
            out = self.attend_tokens(tokens)
            out = out.reshape(b, h * w, c)
        else:
            out = self.attend_tokens(tokens)
        return x + out.reshape(b, h, w, c).permute(0, 3, 1, 2)


class CrossAttention(nn.Module):
    """Spatial queries attending over the semantic token sequence."""

    def __init__(self, channels: int, token_dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.norm = _norm(channels)
        self.to_q = nn.Linear(channels, channels)
        self.to_kv = nn.Linear(token_dim, 2 * channels)
        self.proj = nn.Linear(channels, channels)

    def forward(self, x: torch.Tensor, tokens: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        q = self.to_q(self.norm(x).permute(0, 2, 3, 1).reshape(b, h * w, c))
        k, v = self.to_kv(tokens).chunk(2, dim=-1)
        out = self.proj(_heads_attention(q, k, v, self.heads))
        return x + out.reshape(b, h, w, c).permute(0, 3, 1, 2)


class AttentionPair(nn.Module):
    def __init__(self, channels: int, token_dim: int, heads: int):
        super().__init__()
        self.self_attn = SelfAttention(channels, heads)
        self.cross_attn = CrossAttention(channels, token_dim, heads)

    def forward(self, x, tokens, views: int = 1):
        return self.cross_attn(self.self_attn(x, views=views), tokens)


class DualUNet(nn.Module):
    def __init__(self, config: UNetConfig):
        super().__init__()
        self.config = config
        widths = config.widths()
        temb = config.time_embed_dim

        self.time_mlp = nn.Sequential(nn.Linear(128, temb), nn.SiLU(), nn.Linear(temb, temb))
        # second conditioning stream alongside the semantic tokens, mirroring
        # a text pathway fed with a constant learned "empty" embedding
        self.empty_token = nn.Parameter(torch.zeros(1, 1, config.token_dim))

        self.in_conv = nn.Conv2d(config.in_channels, widths[0], 3, padding=1)

        self.down_res = nn.ModuleList([FiLMResBlock(widths[i], widths[i], temb) for i in range(4)])
        self.down_attn = nn.ModuleDict(
            {str(i): AttentionPair(widths[i], config.token_dim, config.num_heads) for i in config.attention_levels}
        )
        self.down_tr = nn.ModuleList([nn.Conv2d(widths[i], widths[i + 1], 3, stride=2, padding=1) for i in range(3)])

        self.mid_res1 = FiLMResBlock(widths[3], widths[3], temb)
        self.mid_attn = AttentionPair(widths[3], config.token_dim, config.num_heads)
        self.mid_res2 = FiLMResBlock(widths[3], widths[3], temb)

        self.up_res = nn.ModuleList([FiLMResBlock(2 * widths[i], widths[i], temb) for i in range(4)])
        self.up_attn = nn.ModuleDict(
            {str(i): AttentionPair(widths[i], config.token_dim, config.num_heads) for i in config.attention_levels}
        )
        self.up_tr = nn.ModuleList([nn.Conv2d(widths[i + 1], widths[i], 3, padding=1) for i in range(3)])

        self.out_norm = _norm(widths[0])
        self.out_conv = nn.Conv2d(widths[0], config.out_channels, 3, padding=1)
        nn.init.zeros_(self.out_conv.weight)
        nn.init.zeros_(self.out_conv.bias)

    def _check_inputs(self, z_t: torch.Tensor, t: torch.Tensor, cond: ConditioningBundle):
        if z_t.ndim != 4 or z_t.shape[1] != self.config.out_channels:
            raise RejectedInput(
                f"latent must be B,{self.config.out_channels},h,w for this path, got {tuple(z_t.shape)}"
            )
        s = cond.structure_latent
        if s.shape[0] != z_t.shape[0] or s.shape[2:] != z_t.shape[2:]:
            raise RejectedInput(
                f"structure latent {tuple(s.shape)} does not match noisy latent {tuple(z_t.shape)}"
            )
        if s.shape[1] + z_t.shape[1] != self.config.in_channels:
            raise RejectedInput(
                f"structure channels {s.shape[1]} incompatible with configured input {self.config.in_channels}"
            )
        if torch.any(t < 0.0) or torch.any(t > 1.0):
            raise RejectedInput("time must lie in [0, 1]")

    def forward(self, z_t: torch.Tensor, t, cond: ConditioningBundle, views: int = 1) -> VelocityPrediction:
        if not torch.is_tensor(t):
            t = torch.full((z_t.shape[0],), float(t), dtype=z_t.dtype, device=z_t.device)
        if t.ndim == 0:
            t = t[None].expand(z_t.shape[0])
        self._check_inputs(z_t, t, cond)

        temb = self.time_mlp(sinusoidal_time_embedding(t.to(z_t.dtype), 128))
        tokens = torch.cat(
            [cond.semantic_tokens.to(z_t.dtype), self.empty_token.expand(z_t.shape[0], -1, -1)], dim=1
        )

        taps = []
        h = self.in_conv(torch.cat([z_t, cond.structure_latent.to(z_t.dtype)], dim=1))
        skips = []
        for i in range(4):
            h = self.down_res[i](h, temb)
            if str(i) in self.down_attn:
                h = self.down_attn[str(i)](h, tokens, views=views)
            taps.append(h)
            skips.append(h)
            if i < 3:
                h = self.down_tr[i](h)

        h = self.mid_res1(h, temb)
        h = self.mid_attn(h, tokens, views=views)
        h = self.mid_res2(h, temb)
        taps.append(h)

        for i in (3, 2, 1, 0):
            h = self.up_res[i](torch.cat([h, skips[i]], dim=1), temb)
            if str(i) in self.up_attn:
                h = self.up_attn[str(i)](h, tokens, views=views)
            taps.append(h)
            if i > 0:
                h = self.up_tr[i - 1](F.interpolate(h, scale_factor=2, mode="nearest"))

        velocity = self.out_conv(F.silu(self.out_norm(h)))
        return VelocityPrediction(velocity=velocity, taps=FeatureTaps(taps))
