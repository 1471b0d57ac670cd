"""Rectified-flow core: linear interpolation paths, the velocity-matching
loss, clean-sample prediction, the few-step Euler sampler, and the dual-path
output combination rule.

Time convention: t = 0 is pure noise, t = 1 is data, so the interpolant is
z_t = (1-t)*eps + t*z_data and the regression target is z_data - eps.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import torch

from .conditioning import ConditioningBundle
from .errors import RejectedInput
from .materials import MaterialTriplet
from .unet import DualUNet


def _broadcast_t(t, batch: int, like: torch.Tensor) -> torch.Tensor:
    if not torch.is_tensor(t):
        t = torch.full((batch,), float(t), dtype=like.dtype, device=like.device)
    if t.ndim == 0:
        t = t[None].expand(batch)
    if torch.any(t < 0.0) or torch.any(t > 1.0):
        raise RejectedInput("time must lie in [0, 1]")
    return t.to(like.dtype)


@dataclass
class FlowState:
    z_t: torch.Tensor
    t: torch.Tensor
    eps: torch.Tensor


def interpolate(z_data: torch.Tensor, eps: torch.Tensor, t) -> FlowState:
    """Linear path point z_t = (1-t)*eps + t*z_data."""
    if z_data.shape != eps.shape:
        raise RejectedInput(f"shape mismatch: data {tuple(z_data.shape)} vs noise {tuple(eps.shape)}")
    tv = _broadcast_t(t, z_data.shape[0], z_data)
    tb = tv.view(-1, *([1] * (z_data.ndim - 1)))
    return FlowState(z_t=(1.0 - tb) * eps + tb * z_data, t=tv, eps=eps)


def velocity_target(z_data: torch.Tensor, eps: torch.Tensor) -> torch.Tensor:
    return z_data - eps


def rf_loss(model: DualUNet, z_data: torch.Tensor, eps: torch.Tensor, t, cond: ConditioningBundle, views: int = 1):
    """Mean squared error between the predicted velocity field and the
    constant path velocity (z_data - eps)."""
    state = interpolate(z_data, eps, t)
    pred = model(state.z_t, state.t, cond, views=views)
    return ((pred.velocity - velocity_target(z_data, eps)) ** 2).mean()


def predict_clean(z_t: torch.Tensor, t, velocity: torch.Tensor) -> torch.Tensor:
    """Clean-sample estimate z_hat = z_t + (1-t)*velocity; exact when the
    velocity equals the true constant path velocity.  At t == 1 the latent is
    already clean and is returned unchanged."""
    tv = _broadcast_t(t, z_t.shape[0], z_t)
    tb = tv.view(-1, *([1] * (z_t.ndim - 1)))
    return z_t + (1.0 - tb) * velocity


@dataclass
class SamplerConfig:
    """Few-step Euler schedule on a strictly increasing grid over [0, 1]."""

    steps: int = 3
    schedule: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        if self.steps < 1:
            raise RejectedInput("sampler needs at least one step")
        if self.schedule is None:
            self.schedule = tuple(float(x) for x in np.linspace(0.0, 1.0, self.steps + 1))
        grid = tuple(float(x) for x in self.schedule)
        if len(grid) != self.steps + 1:
            raise RejectedInput(f"schedule must have steps+1 = {self.steps + 1} points, got {len(grid)}")
        if grid[0] != 0.0 or grid[-1] != 1.0:
            raise RejectedInput("schedule endpoints must be exactly 0 and 1")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise RejectedInput("schedule must be strictly increasing")
        self.schedule = grid


GuidanceFn = Callable[[torch.Tensor, float, torch.Tensor], torch.Tensor]


def sample(
    model: DualUNet,
    cond: ConditioningBundle,
    config: SamplerConfig,
    seed: int,
    views: int = 1,
    guidance_fn: Optional[GuidanceFn] = None,
    noise: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """Explicit Euler integration of dz/dt = v(z, t) from seeded Gaussian
    noise at t=0 to t=1.  Exactly ``config.steps`` network evaluations.

    ``guidance_fn(z_t, t, velocity)`` may adjust the state before each Euler
    update (used by tiled high-resolution inference).
    """
    b = cond.structure_latent.shape[0]
    h, w = cond.structure_latent.shape[2:]
    shape = (b, model.config.out_channels, h, w)
    if noise is not None:
        if tuple(noise.shape) != shape:
            raise RejectedInput(f"noise shape {tuple(noise.shape)} != latent shape {shape}")
        z = noise.clone()
    else:
        gen = torch.Generator().manual_seed(seed)
        z = torch.randn(shape, generator=gen)
    grid = config.schedule
    for i in range(config.steps):
        t_i = grid[i]
        dt = grid[i + 1] - grid[i]
        v = model(z, t_i, cond, views=views).velocity
        if guidance_fn is not None:
            z = guidance_fn(z, t_i, v)
        z = z + dt * v
    return z


def combine_outputs(trip_alb: MaterialTriplet, trip_mat: MaterialTriplet) -> MaterialTriplet:
    """Dual-path output: albedo from the albedo path, metallic and roughness
    from the material path (bit-exact selection)."""
    if trip_alb.resolution != trip_mat.resolution:
        raise RejectedInput(
            f"resolution mismatch: {trip_alb.resolution} vs {trip_mat.resolution}"
        )
    return MaterialTriplet(trip_alb.albedo, trip_mat.metallic, trip_mat.roughness)
