"""Image metrics: PSNR, SSIM, RMSE, and the random-feature perceptual proxy.

All metrics accept an optional boolean foreground mask (H×W×1) and are then
computed over masked pixels only; rendered-object evaluation always passes
the stored foreground mask so the black background never dilutes scores.
"""
from __future__ import annotations

import cv2
import numpy as np
import torch

from .errors import RejectedInput
from .perceptual import get_pyramid

PSNR_CAP_DB = 100.0
_SSIM_C1 = 0.01**2
_SSIM_C2 = 0.03**2


def _check_pair(a: np.ndarray, b: np.ndarray, mask):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 2:
        a = a[..., None]
    if b.ndim == 2:
        b = b[..., None]
    if a.shape != b.shape:
        raise RejectedInput(f"shape mismatch: {a.shape} vs {b.shape}")
    if mask is not None:
        mask = np.asarray(mask).astype(bool)
        if mask.ndim == 3:
            mask = mask[..., 0]
        if mask.shape != a.shape[:2]:
            raise RejectedInput(f"mask shape {mask.shape} does not match image {a.shape[:2]}")
        if not mask.any():
            raise RejectedInput("mask selects no pixels")
    return a, b, mask


def _masked_mse(a, b, mask) -> float:
    diff = (a - b) ** 2
    if mask is None:
        return float(diff.mean())
    return float(diff[mask].mean())


def rmse(a: np.ndarray, b: np.ndarray, mask=None) -> float:
    a, b, mask = _check_pair(a, b, mask)
    return float(np.sqrt(_masked_mse(a, b, mask)))


def psnr(a: np.ndarray, b: np.ndarray, mask=None) -> float:
    """10*log10(1/MSE) for values in [0,1], capped at 100 dB."""
    a, b, mask = _check_pair(a, b, mask)
    mse = _masked_mse(a, b, mask)
    if mse <= 0.0:
        return PSNR_CAP_DB
    return float(min(10.0 * np.log10(1.0 / mse), PSNR_CAP_DB))


def _gaussian_blur(x: np.ndarray) -> np.ndarray:
    return cv2.GaussianBlur(x, (11, 11), 1.5)


def ssim(a: np.ndarray, b: np.ndarray, mask=None) -> float:
    """Mean SSIM with an 11×11 Gaussian window (sigma 1.5), standard
    stabilizers C1=0.01^2, C2=0.03^2; channels averaged."""
    a, b, mask = _check_pair(a, b, mask)
    maps = []
    for c in range(a.shape[2]):
        x, y = a[..., c], b[..., c]
        mu_x = _gaussian_blur(x)
        mu_y = _gaussian_blur(y)
        sig_x = _gaussian_blur(x * x) - mu_x * mu_x
        sig_y = _gaussian_blur(y * y) - mu_y * mu_y
        cov = _gaussian_blur(x * y) - mu_x * mu_y
        num = (2 * mu_x * mu_y + _SSIM_C1) * (2 * cov + _SSIM_C2)
        den = (mu_x * mu_x + mu_y * mu_y + _SSIM_C1) * (sig_x + sig_y + _SSIM_C2)
        maps.append(num / den)
    full = np.mean(maps, axis=0)
    if mask is None:
        return float(full.mean())
    return float(full[mask].mean())


def perceptual(a: np.ndarray, b: np.ndarray, mask=None) -> float:
    """Random-feature proxy distance (>= 0, 0 iff inputs match on the mask)."""
    a, b, mask = _check_pair(a, b, mask)
    if mask is not None:
        a = a * mask[..., None]
        b = b * mask[..., None]
    pyr = get_pyramid(in_channels=a.shape[2])
    ta = torch.from_numpy(a.astype(np.float32)).permute(2, 0, 1)[None]
    tb = torch.from_numpy(b.astype(np.float32)).permute(2, 0, 1)[None]
    with torch.no_grad():
        return float(pyr.distance(ta, tb))
