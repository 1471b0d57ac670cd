"""Conditioning signals shared by both denoising paths.

Two complementary signals per input image: semantic tokens from a frozen
self-supervised encoder through a trainable projection, and a low-level
structure latent from the RGB codec that gets concatenated with the noisy
latent at every denoising step.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .ckpt import load_checkpoint, load_state_dict_from_numpy, save_checkpoint, state_dict_to_numpy
from .codecs import AlbedoPathCodec
from .data import load_split_tensors
from .dataset import DatasetManifest
from .errors import ConfigError, RejectedInput
from .utils import derive_seed, enable_determinism

TOKEN_COUNT = 16
TOKEN_DIM = 256
SEMANTIC_FEATURES = 128


class SemanticEncoder(nn.Module):
    """Small convolutional pyramid; pretrained on rotation prediction over
    the synthetic renders, then frozen as the high-level image encoder."""

    def __init__(self, expected_resolution: int = 64, feature_dim: int = SEMANTIC_FEATURES):
        super().__init__()
        self.expected_resolution = expected_resolution
        self.feature_dim = feature_dim
        self.net = nn.Sequential(
            nn.Conv2d(3, 32, 3, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(32, 64, 3, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(64, 96, 3, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(96, feature_dim, 3, stride=2, padding=1),
        )

    def hyperparams(self) -> dict:
        return {"expected_resolution": self.expected_resolution, "feature_dim": self.feature_dim}

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != 3:
            raise RejectedInput(f"expected B,3,H,W image, got {tuple(x.shape)}")
        if x.shape[2] != self.expected_resolution or x.shape[3] != self.expected_resolution:
            raise RejectedInput(
                f"semantic encoder expects {self.expected_resolution}x{self.expected_resolution} input, "
                f"got {x.shape[2]}x{x.shape[3]}"
            )
        return self.net(x)

    def freeze(self) -> "SemanticEncoder":
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()
        return self


class TokenProjection(nn.Module):
    """Trainable map from frozen encoder features to N×d semantic tokens."""

    def __init__(self, feature_dim: int = SEMANTIC_FEATURES, token_dim: int = TOKEN_DIM):
        super().__init__()
        self.proj = nn.Linear(feature_dim, token_dim)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        b, c, h, w = features.shape
        tokens = features.permute(0, 2, 3, 1).reshape(b, h * w, c)
        return self.proj(tokens)


def pretrain_semantic_encoder(
    manifest: DatasetManifest,
    steps: int = 500,
    batch_size: int = 8,
    lr: float = 1e-3,
    seed: int = 0,
    out_path: str | Path | None = None,
    deterministic: bool = False,
) -> SemanticEncoder:
    """Rotation-prediction pretraining (0/90/180/270), then freeze."""
    enable_determinism(deterministic)
    data = load_split_tensors(manifest, "train")
    images = data["images"]
    res = images.shape[2]

    torch.manual_seed(derive_seed(seed, 0x30))
    encoder = SemanticEncoder(expected_resolution=res)
    head = nn.Linear(encoder.feature_dim, 4)
    opt = torch.optim.AdamW(list(encoder.parameters()) + list(head.parameters()), lr=lr)
    rng = np.random.default_rng(derive_seed(seed, 0x31))

    for _ in range(steps):
        idx = torch.from_numpy(rng.integers(0, images.shape[0], size=batch_size).astype(np.int64))
        rots = rng.integers(0, 4, size=batch_size)
        batch = torch.stack([torch.rot90(images[i], int(k), dims=(1, 2)) for i, k in zip(idx, rots)])
        feats = encoder(batch).mean(dim=(2, 3))
        logits = head(feats)
        loss = F.cross_entropy(logits, torch.from_numpy(rots.astype(np.int64)))
        opt.zero_grad()
        loss.backward()
        opt.step()

    encoder.freeze()
    if out_path is not None:
        save_checkpoint(
            out_path,
            {
                "kind": "semantic",
                "hyperparams": encoder.hyperparams(),
                "state": state_dict_to_numpy(encoder),
                "step": steps,
                "seed": seed,
            },
        )
    return encoder


def load_semantic_encoder(path: str | Path) -> SemanticEncoder:
    try:
        record = load_checkpoint(path)
    except FileNotFoundError as exc:
        raise ConfigError(str(exc)) from exc
    if record.get("kind") != "semantic":
        raise ConfigError(f"{path} is not a semantic encoder checkpoint")
    encoder = SemanticEncoder(**record["hyperparams"])
    load_state_dict_from_numpy(encoder, record["state"])
    return encoder.freeze()


def semantic_embed(image: torch.Tensor, encoder: SemanticEncoder, projection: TokenProjection) -> torch.Tensor:
    """Tokens = projection(frozen_encoder(image)); shape B×16×256 at the
    default 64×64 resolution (4×4 feature grid)."""
    return projection(encoder(image))


def structure_latent(image: torch.Tensor, codec: AlbedoPathCodec) -> torch.Tensor:
    """RGB-codec latent of the input photo, concatenated with the noisy
    latent by the denoisers."""
    with torch.no_grad():
        return codec.encode_image(image)


@dataclass
class ConditioningBundle:
    semantic_tokens: torch.Tensor  # B,N,d
    structure_latent: torch.Tensor  # B,4,h,w

    def __post_init__(self):
        if not torch.isfinite(self.semantic_tokens).all():
            raise RejectedInput("semantic tokens contain non-finite values")

    @property
    def batch(self) -> int:
        return self.semantic_tokens.shape[0]

    def select(self, idx: torch.Tensor) -> "ConditioningBundle":
        return ConditioningBundle(self.semantic_tokens[idx], self.structure_latent[idx])

    def save(self, path: str | Path) -> None:
        save_checkpoint(path, {"kind": "bundle", "tokens": self.semantic_tokens, "structure": self.structure_latent})

    @staticmethod
    def load(path: str | Path) -> "ConditioningBundle":
        record = load_checkpoint(path)
        if record.get("kind") != "bundle":
            raise ConfigError(f"{path} is not a conditioning bundle")
        return ConditioningBundle(
            torch.from_numpy(record["tokens"]).clone(),
            torch.from_numpy(record["structure"]).clone(),
        )


def image_to_tensor(image: np.ndarray) -> torch.Tensor:
    if image.ndim != 3 or image.shape[2] != 3:
        raise RejectedInput(f"expected H,W,3 image, got {image.shape}")
    return torch.from_numpy(np.ascontiguousarray(image.astype(np.float32))).permute(2, 0, 1)[None]


def build_condition(
    image,
    encoder: SemanticEncoder,
    projection: TokenProjection,
    codec: AlbedoPathCodec,
) -> ConditioningBundle:
    """Construct the bundle once per image; both paths consume the same
    instance."""
    x = image_to_tensor(image) if isinstance(image, np.ndarray) else image
    with torch.no_grad():
        tokens = semantic_embed(x, encoder, projection)
    return ConditioningBundle(semantic_tokens=tokens, structure_latent=structure_latent(x, codec))
