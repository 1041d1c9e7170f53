"""Image quality metrics and the training penalty.

PSNR and SSIM are computed in double precision on [0, 1] float images,
before any quantization.  SSIM uses an 11x11 Gaussian window (sigma 1.5),
valid positions only (no padding), averaged over channels.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import Tensor

SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
CHARBONNIER_EPS = 1e-6


def _check_pair(a: Tensor, b: Tensor, name: str):
    if a.shape != b.shape:
        raise ValueError(f"{name}: shapes differ, {tuple(a.shape)} vs {tuple(b.shape)}")
    for t in (a, b):
        if not torch.isfinite(t).all():
            raise ValueError(f"{name}: non-finite values")
        if t.min() < 0 or t.max() > 1:
            raise ValueError(f"{name}: values must lie in [0, 1]")


def psnr(prediction: Tensor, target: Tensor) -> float:
    """10 * log10(1 / MSE) in dB over all pixels and channels; +inf for an
    exact match (callers serialize the sentinel explicitly)."""
    _check_pair(prediction, target, "psnr")
    mse = (prediction.double() - target.double()).pow(2).mean().item()
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> Tensor:
    coords = torch.arange(size, dtype=torch.float64) - (size - 1) / 2
    g = torch.exp(-coords.pow(2) / (2 * sigma**2))
    kernel = torch.outer(g, g)
    return kernel / kernel.sum()


_WINDOW = _gaussian_window()


def ssim(prediction: Tensor, target: Tensor) -> float:
    """Mean structural similarity over valid 11x11 windows and channels.

    Accepts (H, W), (C, H, W) or (B, C, H, W) tensors in [0, 1]; spatial
    dims must be at least 11.
    """
    _check_pair(prediction, target, "ssim")
    a = prediction.double().reshape(-1, 1, *prediction.shape[-2:])
    b = target.double().reshape(-1, 1, *target.shape[-2:])
    if a.shape[-2] < 11 or a.shape[-1] < 11:
        raise ValueError(f"ssim needs at least 11x11 images, got {tuple(a.shape[-2:])}")
    kern = _WINDOW.reshape(1, 1, 11, 11)

    def smooth(x):
        return F.conv2d(x, kern)

    mu_a = smooth(a)
    mu_b = smooth(b)
    var_a = smooth(a * a) - mu_a * mu_a
    var_b = smooth(b * b) - mu_b * mu_b
    cov = smooth(a * b) - mu_a * mu_b
    score = ((2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)) / (
        (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2)
    )
    return score.mean().item()


def charbonnier_loss(prediction: Tensor, target: Tensor, eps: float = CHARBONNIER_EPS) -> Tensor:
    """mean(sqrt((p - t)^2 + eps^2)); smooth near zero, asymptotically L1.
    Differentiable; used as the training objective (no range check, the raw
    network output is unclamped)."""
    if prediction.shape != target.shape:
        raise ValueError(
            f"loss shapes differ: {tuple(prediction.shape)} vs {tuple(target.shape)}"
        )
    return ((prediction - target).pow(2) + eps * eps).sqrt().mean()
