"""Random-feature perceptual distance.

A small convolutional pyramid with frozen, seed-determined random weights.
Distances between its feature maps serve as the perceptual term in codec
training and as the perceptual column of evaluation reports.  This is an
explicit proxy; reported values are not comparable to published LPIPS
numbers.
"""
from __future__ import annotations

import torch
import torch.nn as nn

DEFAULT_SEED = 1234


class RandomFeaturePyramid(nn.Module):
    def __init__(self, in_channels: int = 3, widths: tuple[int, ...] = (16, 32, 64), seed: int = DEFAULT_SEED):
        super().__init__()
        self.in_channels = in_channels
        gen = torch.Generator().manual_seed(seed)
        layers = []
        prev = in_channels
        for w in widths:
            conv = nn.Conv2d(prev, w, 3, stride=2, padding=1)
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen) * (prev * 9) ** -0.5)
                conv.bias.zero_()
            layers.append(conv)
            prev = w
        self.convs = nn.ModuleList(layers)
        self.act = nn.GELU()  # smooth, so distances stay cleanly differentiable
        for p in self.parameters():
            p.requires_grad_(False)

    def features(self, x: torch.Tensor) -> list[torch.Tensor]:
        feats = []
        h = x * 2.0 - 1.0
        for conv in self.convs:
            h = self.act(conv(h))
            feats.append(h)
        return feats

    def distance(self, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
        """Mean over pyramid levels of per-element squared feature error."""
        fa = self.features(a)
        fb = self.features(b)
        terms = [((x - y) ** 2).mean() for x, y in zip(fa, fb)]
        return torch.stack(terms).mean()


_CACHE: dict[tuple[int, int], RandomFeaturePyramid] = {}


def get_pyramid(in_channels: int = 3, seed: int = DEFAULT_SEED) -> RandomFeaturePyramid:
    key = (in_channels, seed)
    if key not in _CACHE:
        _CACHE[key] = RandomFeaturePyramid(in_channels=in_channels, seed=seed)
    return _CACHE[key]
