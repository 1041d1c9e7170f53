"""Differentiable primitives: signed-magnitude pooling, temporal
self-attention, fractional bilinear sampling, and the per-pixel deformable
kernel sum used by the synthesis blocks.

All functions are stateless tensor transforms and safe to call
concurrently; :class:`TemporalSelfAttention` holds parameters and follows
the usual read-shared / exclusive-update discipline.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch import Tensor


def abs_max_pool_temporal(x: Tensor, window: int, stride: int, dim: int = -2) -> Tensor:
    """Pool along one axis, keeping the element of maximal magnitude.

    The selected element is returned with its original sign.  Ties go to the
    lowest index in the window.
    """
    if window < 1 or stride < 1:
        raise ValueError("window and stride must be positive")
    if x.shape[dim] < window:
        raise ValueError(
            f"window {window} exceeds axis length {x.shape[dim]}"
        )
    windows = x.unfold(dim, window, stride)  # window becomes the last axis
    idx = windows.abs().argmax(dim=-1, keepdim=True)
    return windows.gather(-1, idx).squeeze(-1)


def abs_max_pool_spatial(x: Tensor, window: int, stride: int) -> Tensor:
    """Signed-magnitude pooling over window x window patches of the trailing
    two (H, W) axes.  Tie-break is row-major scan order within the patch."""
    if window < 1 or stride < 1:
        raise ValueError("window and stride must be positive")
    if x.shape[-2] < window or x.shape[-1] < window:
        raise ValueError(
            f"window {window} exceeds spatial size {tuple(x.shape[-2:])}"
        )
    patches = x.unfold(-2, window, stride).unfold(-2, window, stride)
    # axes now (..., H', W', wy, wx); flatten the patch row-major
    patches = patches.reshape(*patches.shape[:-2], window * window)
    idx = patches.abs().argmax(dim=-1, keepdim=True)
    return patches.gather(-1, idx).squeeze(-1)


def abs_max_pool(x: Tensor, axis_kind: str, window: int, stride: int) -> Tensor:
    """Dispatch on axis_kind: "temporal" pools dim -2 of (..., T, C) input,
    "spatial" pools the trailing (H, W) axes."""
    if axis_kind == "temporal":
        return abs_max_pool_temporal(x, window, stride)
    if axis_kind == "spatial":
        return abs_max_pool_spatial(x, window, stride)
    raise ValueError(f"unknown axis_kind {axis_kind!r}")


class TemporalSelfAttention(nn.Module):
    """Multi-head self-attention over the time-bin tokens at each spatial
    site, wrapped pre-norm with a residual connection.

    Input (..., T, C): every leading index is an independent site.  No
    positional encoding; the output projection starts at zero so the block
    is an identity at initialization.
    """

    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads != 0:
            raise ValueError(f"channels {dim} not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads
        self.norm = nn.LayerNorm(dim)
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.out_proj = nn.Linear(dim, dim)
        nn.init.zeros_(self.out_proj.weight)
        nn.init.zeros_(self.out_proj.bias)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.dim:
            raise ValueError(f"expected {self.dim} channels, got {x.shape[-1]}")
        lead = x.shape[:-2]
        t = x.shape[-2]
        d = self.dim // self.heads
        h = self.norm(x).reshape(-1, t, self.dim)
        n = h.shape[0]

        def split(proj):
            return proj(h).view(n, t, self.heads, d).transpose(1, 2)

        q, k, v = split(self.q_proj), split(self.k_proj), split(self.v_proj)
        attn = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(d), dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(n, t, self.dim)
        return x + self.out_proj(out).reshape(*lead, t, self.dim)


def bilinear_sample(image: Tensor, xs: Tensor, ys: Tensor) -> Tensor:
    """Sample image planes at fractional coordinates with border clamping.

    image: (B, C, H, W) or (C, H, W); xs, ys: (B, *S) or (*S) matching the
    image batching.  Returns (B, C, *S) / (C, *S).  Bilinear in the four
    neighbours, differentiable in both pixel values and coordinates;
    out-of-range coordinates clamp to the border.
    """
    squeeze = image.dim() == 3
    if squeeze:
        image = image.unsqueeze(0)
        xs = xs.unsqueeze(0)
        ys = ys.unsqueeze(0)
    if xs.shape != ys.shape or xs.shape[0] != image.shape[0]:
        raise ValueError("coordinate tensors must share shape and batch")
    if torch.isnan(xs).any() or torch.isnan(ys).any():
        # NaN survives the border clamp and floors to a garbage index;
        # typically a diverged model upstream
        raise FloatingPointError("bilinear_sample: NaN coordinates")
    b, c, h, w = image.shape
    sample_shape = xs.shape[1:]
    xs = xs.reshape(b, -1).clamp(0, w - 1)
    ys = ys.reshape(b, -1).clamp(0, h - 1)

    x0 = xs.floor()
    y0 = ys.floor()
    fx = xs - x0
    fy = ys - y0
    x0 = x0.long()
    y0 = y0.long()
    x1 = (x0 + 1).clamp(max=w - 1)
    y1 = (y0 + 1).clamp(max=h - 1)

    flat = image.reshape(b, c, h * w)

    def take(yi, xi):
        idx = (yi * w + xi).unsqueeze(1).expand(b, c, -1)
        return flat.gather(2, idx)

    fx = fx.unsqueeze(1)
    fy = fy.unsqueeze(1)
    out = (
        take(y0, x0) * (1 - fx) * (1 - fy)
        + take(y0, x1) * fx * (1 - fy)
        + take(y1, x0) * (1 - fx) * fy
        + take(y1, x1) * fx * fy
    )
    out = out.reshape(b, c, *sample_shape)
    return out.squeeze(0) if squeeze else out


def deformable_conv(image: Tensor, weights: Tensor, offsets_x: Tensor, offsets_y: Tensor) -> Tensor:
    """Per-pixel deformable kernel sum over K fractional taps.

    image: (B, C, H, W) or (C, H, W); weights/offsets: (B, K, H, W) or
    (K, H, W).  Output pixel (x, y) accumulates, over taps n,
    weights[n, y, x] * image sampled at (x + offsets_x[n, y, x],
    y + offsets_y[n, y, x]).  Offsets are absolute displacements with no
    base grid; all channels share the kernels.
    """
    squeeze = image.dim() == 3
    if squeeze:
        image = image.unsqueeze(0)
        weights = weights.unsqueeze(0)
        offsets_x = offsets_x.unsqueeze(0)
        offsets_y = offsets_y.unsqueeze(0)
    if not (weights.shape == offsets_x.shape == offsets_y.shape):
        raise ValueError("weights and offsets must share shape")
    b, c, h, w = image.shape
    if weights.shape[0] != b or weights.shape[-2:] != (h, w):
        raise ValueError(
            f"kernels {tuple(weights.shape)} do not match image {tuple(image.shape)}"
        )
    grid_y, grid_x = torch.meshgrid(
        torch.arange(h, dtype=image.dtype, device=image.device),
        torch.arange(w, dtype=image.dtype, device=image.device),
        indexing="ij",
    )
    sampled = bilinear_sample(image, grid_x + offsets_x, grid_y + offsets_y)
    out = (sampled * weights.unsqueeze(1)).sum(dim=2)
    return out.squeeze(0) if squeeze else out
