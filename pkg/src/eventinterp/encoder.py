"""Event feature encoder: voxel grids in, three-level feature pyramid out.

Each of the four event intervals is encoded independently with shared
weights (the interval axis is folded into the batch), so the pyramid's
channel layout keeps the four temporal parts as contiguous channel groups
and the synthesis blocks can unbind them again.

Stage order per interval: per-bin linear embedding, temporal self-attention
over the time bins, signed-magnitude pooling along time, then a per-scale
chain of channel remap, SmoothNet, and spatial signed-magnitude pooling.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch import Tensor

from .nn_ops import TemporalSelfAttention, abs_max_pool

N_INTERVALS = 4


@dataclass(frozen=True)
class FeaturePyramid:
    """Three feature maps at scales 1, 1/2, 1/4 of the input resolution.

    Channel counts are divisible by four; group t of each level encodes
    event interval t.
    """

    f0: Tensor
    f1: Tensor
    f2: Tensor

    def __post_init__(self):
        levels = (self.f0, self.f1, self.f2)
        for f in levels:
            if f.dim() != 4:
                raise ValueError(f"pyramid level must be (B, C, H, W), got {tuple(f.shape)}")
            if f.shape[1] % N_INTERVALS != 0:
                raise ValueError(f"channel count {f.shape[1]} not divisible by {N_INTERVALS}")
        for fine, coarse in zip(levels, levels[1:]):
            if coarse.shape[0] != fine.shape[0]:
                raise ValueError("pyramid levels disagree on batch size")
            if coarse.shape[-2:] != (fine.shape[-2] // 2, fine.shape[-1] // 2):
                raise ValueError(
                    f"level {tuple(coarse.shape[-2:])} is not half of {tuple(fine.shape[-2:])}"
                )

    @property
    def levels(self):
        return (self.f0, self.f1, self.f2)


class SmoothNet(nn.Module):
    """A lead 3x3 convolution followed by `depth` residual blocks
    (conv 3x3, SiLU, conv 3x3, skip add).  Spatial shape is preserved."""

    def __init__(self, channels: int, depth: int):
        super().__init__()
        if channels < 1 or depth < 0:
            raise ValueError("channels must be positive and depth non-negative")
        self.lead = nn.Conv2d(channels, channels, 3, padding=1)
        self.blocks = nn.ModuleList(
            nn.ModuleList(
                [
                    nn.Conv2d(channels, channels, 3, padding=1),
                    nn.Conv2d(channels, channels, 3, padding=1),
                ]
            )
            for _ in range(depth)
        )
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.zeros_(m.bias)

    def forward(self, x: Tensor) -> Tensor:
        x = self.lead(x)
        for first, second in self.blocks:
            x = x + second(F.silu(first(x)))
        return x


class EventEncoder(nn.Module):
    """Encode clip voxels (B, 4, T, H, W) into a FeaturePyramid.

    channels gives the total width of each pyramid level; every interval
    tower contributes channels[l] // 4 of them.  With msa_enabled=False the
    attention block is dropped and the embedded tokens pass straight to the
    temporal pooling, leaving every shape unchanged.
    """

    def __init__(
        self,
        n_time_bins: int = 8,
        msa_dim: int = 16,
        msa_heads: int = 16,
        msa_enabled: bool = True,
        channels=(32, 64, 96),
        smoothnet_depth: int = 2,
    ):
        super().__init__()
        if n_time_bins < 2 or n_time_bins % 2 != 0:
            raise ValueError(f"n_time_bins must be even and >= 2, got {n_time_bins}")
        if len(channels) != 3:
            raise ValueError("channels must list exactly three pyramid widths")
        if any(c < N_INTERVALS or c % N_INTERVALS != 0 for c in channels):
            raise ValueError(f"channel widths {channels} must be positive multiples of 4")
        self.n_time_bins = n_time_bins
        self.msa_dim = msa_dim
        self.msa_enabled = msa_enabled
        self.channels = tuple(channels)

        self.embed = nn.Linear(1, msa_dim)
        self.msa = TemporalSelfAttention(msa_dim, msa_heads) if msa_enabled else None

        per = [c // N_INTERVALS for c in channels]
        flat = (n_time_bins // 2) * msa_dim
        self.remap0 = nn.Conv2d(flat, per[0], 1)
        self.smooth0 = SmoothNet(per[0], smoothnet_depth)
        self.remap1 = nn.Conv2d(per[0], per[1], 1)
        self.smooth1 = SmoothNet(per[1], smoothnet_depth)
        self.remap2 = nn.Conv2d(per[1], per[2], 1)
        self.smooth2 = SmoothNet(per[2], smoothnet_depth)

        # All-zero voxels must encode to an all-zero pyramid, so every bias
        # in the path starts at zero (the MSA output projection already does).
        nn.init.zeros_(self.embed.bias)
        for remap in (self.remap0, self.remap1, self.remap2):
            nn.init.zeros_(remap.bias)

    def forward(self, voxels: Tensor) -> FeaturePyramid:
        if voxels.dim() != 5 or voxels.shape[1] != N_INTERVALS:
            raise ValueError(
                f"expected (B, {N_INTERVALS}, T, H, W) voxels, got {tuple(voxels.shape)}"
            )
        b, _, t, h, w = voxels.shape
        if t != self.n_time_bins:
            raise ValueError(f"expected {self.n_time_bins} time bins, got {t}")
        if h % 4 != 0 or w % 4 != 0:
            raise ValueError(f"spatial dims must be multiples of 4, got {h}x{w}")

        x = voxels.reshape(b * N_INTERVALS, t, h, w)
        x = x.permute(0, 2, 3, 1).unsqueeze(-1)  # (b*4, H, W, T, 1)
        x = self.embed(x)
        if self.msa is not None:
            x = self.msa(x)
        x = abs_max_pool(x, "temporal", 2, 2)  # (b*4, H, W, T/2, D)
        x = x.flatten(-2).permute(0, 3, 1, 2)  # (b*4, T/2 * D, H, W)

        s0 = self.smooth0(self.remap0(x))
        s1 = self.smooth1(self.remap1(abs_max_pool(s0, "spatial", 2, 2)))
        s2 = self.smooth2(self.remap2(abs_max_pool(s1, "spatial", 2, 2)))

        def regroup(f):
            n, c, fh, fw = f.shape
            return f.reshape(b, N_INTERVALS * c, fh, fw)

        return FeaturePyramid(regroup(s0), regroup(s1), regroup(s2))


def encode_events(voxels: Tensor, encoder: EventEncoder) -> FeaturePyramid:
    """Functional alias: run `encoder` on a clip-voxel tensor."""
    return encoder(voxels)
