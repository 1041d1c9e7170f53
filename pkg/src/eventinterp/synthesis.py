"""Synthesis blocks: turn per-scale event features into deformable kernels
and blending masks, apply them to the four RGB keyframes, and recombine the
per-scale outputs into the interpolated frame.

Kernel heads are separate per temporal part; weights/offsets share the tap
count K.  Offsets are absolute displacements (no base grid), so zero offsets
sample each pixel in place.  Blending masks are a softmax over the four
temporal parts, a partition of unity at every pixel.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch import Tensor

from .nn_ops import deformable_conv

N_FRAMES = 4


@dataclass(frozen=True)
class KeyframeClip:
    """Four RGB keyframes around the target instant.

    frames: (4, 3, H, W) or (B, 4, 3, H, W), finite values in [0, 1].
    """

    frames: Tensor

    def __post_init__(self):
        f = self.frames
        if f.dim() not in (4, 5) or f.shape[-4] != N_FRAMES or f.shape[-3] != 3:
            raise ValueError(f"expected (..., 4, 3, H, W) frames, got {tuple(f.shape)}")
        if not torch.isfinite(f).all():
            raise ValueError("keyframes contain non-finite values")
        if f.min() < 0 or f.max() > 1:
            raise ValueError("keyframe values must lie in [0, 1]")

    @property
    def height(self):
        return self.frames.shape[-2]

    @property
    def width(self):
        return self.frames.shape[-1]


@dataclass(frozen=True)
class DeformableKernelSet:
    """Per-pixel kernels for the four temporal parts.

    Each field has shape (B, 4, K, H, W): weights, horizontal offsets,
    vertical offsets.
    """

    weights: Tensor
    offsets_x: Tensor
    offsets_y: Tensor

    def __post_init__(self):
        if not (self.weights.shape == self.offsets_x.shape == self.offsets_y.shape):
            raise ValueError("kernel fields must share one shape")
        if self.weights.dim() != 5 or self.weights.shape[1] != N_FRAMES:
            raise ValueError(
                f"expected (B, 4, K, H, W) kernels, got {tuple(self.weights.shape)}"
            )

    @property
    def taps(self):
        return self.weights.shape[2]


@dataclass(frozen=True)
class SynBlockOutput:
    """per_frame: (B, 4, 3, H, W); masks: (B, 4, H, W) summing to one over
    the frame axis; combined: (B, 3, H, W) == blend(per_frame, masks)."""

    per_frame: Tensor
    masks: Tensor
    combined: Tensor


def blend(per_frame: Tensor, masks: Tensor) -> Tensor:
    """Mask-weighted sum over the frame axis; masks broadcast over color."""
    if per_frame.shape[-4] != masks.shape[-3] or per_frame.shape[-2:] != masks.shape[-2:]:
        raise ValueError(
            f"cannot blend {tuple(per_frame.shape)} with masks {tuple(masks.shape)}"
        )
    return (per_frame * masks.unsqueeze(-3)).sum(dim=-4)


def _head(c_in: int, hidden: int, c_out: int, depth: int) -> nn.Sequential:
    layers = []
    ch = c_in
    for _ in range(depth):
        layers += [nn.Conv2d(ch, hidden, 3, padding=1), nn.SiLU()]
        ch = hidden
    layers.append(nn.Conv2d(ch, c_out, 3, padding=1))
    return nn.Sequential(*layers)


class SynthesisBlock(nn.Module):
    """One per-scale fusion block.

    The feature map is unbound into four channel groups (one per temporal
    part); each group drives three convolutional heads emitting kernel
    weights and x/y offsets for its keyframe.  Masks come from one head on
    the concatenation of the features and all four frames.

    Weight heads start with zero weights and bias 1/(3K), offset heads start
    at zero, so each block initially emits a third of the masked keyframe
    mean and the three-level pyramid sum starts near the keyframe average.
    """

    def __init__(self, feature_channels: int, kernel_taps: int = 25,
                 hidden: int | None = None, head_depth: int = 1):
        super().__init__()
        if feature_channels % N_FRAMES != 0:
            raise ValueError(f"feature channels {feature_channels} not divisible by 4")
        if kernel_taps < 1 or head_depth < 1:
            raise ValueError("kernel_taps and head_depth must be positive")
        self.feature_channels = feature_channels
        self.kernel_taps = kernel_taps
        group = feature_channels // N_FRAMES
        hidden = feature_channels if hidden is None else hidden

        def bank():
            return nn.ModuleList(
                _head(group, hidden, kernel_taps, head_depth) for _ in range(N_FRAMES)
            )

        self.weight_heads = bank()
        self.offset_x_heads = bank()
        self.offset_y_heads = bank()
        self.mask_head = _head(feature_channels + N_FRAMES * 3, hidden, N_FRAMES, 1)

        for head in self.weight_heads:
            nn.init.zeros_(head[-1].weight)
            nn.init.constant_(head[-1].bias, 1.0 / (3 * kernel_taps))
        for head in list(self.offset_x_heads) + list(self.offset_y_heads):
            nn.init.zeros_(head[-1].weight)
            nn.init.zeros_(head[-1].bias)

    def predict_kernels(self, f: Tensor) -> DeformableKernelSet:
        groups = f.chunk(N_FRAMES, dim=1)

        def run(heads):
            return torch.stack([h(g) for h, g in zip(heads, groups)], dim=1)

        return DeformableKernelSet(
            run(self.weight_heads), run(self.offset_x_heads), run(self.offset_y_heads)
        )

    def predict_masks(self, f: Tensor, frames: Tensor) -> Tensor:
        b, _, h, w = f.shape
        stacked = torch.cat([f, frames.reshape(b, N_FRAMES * 3, h, w)], dim=1)
        return torch.softmax(self.mask_head(stacked), dim=1)

    def forward(self, f: Tensor, frames: Tensor) -> SynBlockOutput:
        if f.dim() != 4 or f.shape[1] != self.feature_channels:
            raise ValueError(
                f"expected (B, {self.feature_channels}, H, W) features, got {tuple(f.shape)}"
            )
        if frames.shape != (f.shape[0], N_FRAMES, 3, f.shape[2], f.shape[3]):
            raise ValueError(
                f"frames {tuple(frames.shape)} do not match features {tuple(f.shape)}"
            )
        kernels = self.predict_kernels(f)
        masks = self.predict_masks(f, frames)
        per_frame = torch.stack(
            [
                deformable_conv(
                    frames[:, t],
                    kernels.weights[:, t],
                    kernels.offsets_x[:, t],
                    kernels.offsets_y[:, t],
                )
                for t in range(N_FRAMES)
            ],
            dim=1,
        )
        return SynBlockOutput(per_frame, masks, blend(per_frame, masks))


def downscale_clip(clip: KeyframeClip, level: int) -> KeyframeClip:
    """Bilinear 2x reduction applied `level` times; level 0 is the identity."""
    if level < 0:
        raise ValueError("level must be non-negative")
    if level == 0:
        return clip
    frames = clip.frames
    if frames.shape[-2] % (1 << level) or frames.shape[-1] % (1 << level):
        raise ValueError(
            f"spatial dims {frames.shape[-2:]} not divisible by {1 << level}"
        )
    lead = frames.shape[:-3]
    flat = frames.reshape(-1, *frames.shape[-3:])
    for _ in range(level):
        flat = F.avg_pool2d(flat, 2)
    return KeyframeClip(flat.reshape(*lead, *flat.shape[-3:]))


def compose_pyramid(o0: Tensor, o1: Tensor, o2: Tensor) -> Tensor:
    """Coarse-to-fine recombination: upscale the coarsest output, add the
    next level, repeat.  Returns the full-resolution image before any
    clamping (losses are computed on this value; clamp only at emission)."""
    squeeze = o0.dim() == 3
    if squeeze:
        o0, o1, o2 = o0.unsqueeze(0), o1.unsqueeze(0), o2.unsqueeze(0)
    for fine, coarse in ((o0, o1), (o1, o2)):
        if coarse.shape[:-2] != fine.shape[:-2] or coarse.shape[-2:] != (
            fine.shape[-2] // 2,
            fine.shape[-1] // 2,
        ):
            raise ValueError(
                f"pyramid shapes do not halve: {tuple(fine.shape)} vs {tuple(coarse.shape)}"
            )

    def up(x):
        return F.interpolate(x, scale_factor=2.0, mode="bilinear", align_corners=False)

    out = up(up(o2) + o1) + o0
    return out.squeeze(0) if squeeze else out
