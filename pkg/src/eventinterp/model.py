"""Full interpolation network: event encoder, three synthesis blocks, and
pyramid recombination, plus configuration, checkpoints, and sample types.

The model consumes precomputed clip voxels (see events.build_clip_voxels)
rather than raw events, so voxelization stays testable on its own.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict, replace

import torch
import torch.nn as nn
from torch import Tensor

from .encoder import EventEncoder
from .events import ClipVoxels, EventInterval, build_clip_voxels
from .synthesis import KeyframeClip, SynthesisBlock, compose_pyramid, downscale_clip

CHECKPOINT_VERSION = 1


class CheckpointError(RuntimeError):
    """Unreadable, mismatched, or wrong-version checkpoint file."""


@dataclass(frozen=True)
class ModelConfig:
    n_time_bins: int = 8
    msa_dim: int = 16
    msa_heads: int = 16
    msa_enabled: bool = True
    channels: tuple = (32, 64, 96)
    smoothnet_depth: int = 2
    kernel_taps: int = 25
    kernel_head_depths: tuple = (1, 1, 2)
    reverse_negates_polarity: bool = True
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(
            self, "kernel_head_depths", tuple(int(d) for d in self.kernel_head_depths)
        )
        if self.n_time_bins < 2 or self.n_time_bins % 2:
            raise ValueError(f"n_time_bins must be even and >= 2, got {self.n_time_bins}")
        if self.msa_dim < 1 or self.msa_heads < 1 or self.msa_dim % self.msa_heads:
            raise ValueError(
                f"msa_heads {self.msa_heads} must divide msa_dim {self.msa_dim}"
            )
        if len(self.channels) != 3 or any(c < 4 or c % 4 for c in self.channels):
            raise ValueError(f"channels must be three multiples of 4, got {self.channels}")
        if len(self.kernel_head_depths) != 3 or any(d < 1 for d in self.kernel_head_depths):
            raise ValueError(
                f"kernel_head_depths must be three positive ints, got {self.kernel_head_depths}"
            )
        if self.smoothnet_depth < 0 or self.kernel_taps < 1:
            raise ValueError("smoothnet_depth must be >= 0 and kernel_taps >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        d["kernel_head_depths"] = list(self.kernel_head_depths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class ClipSample:
    """One training/eval sample: four keyframes, the four event intervals
    between the five keyframe instants, and the ground-truth middle frame."""

    clip: KeyframeClip
    intervals: tuple
    target: Tensor

    def __post_init__(self):
        if len(self.intervals) != 4 or not all(
            isinstance(i, EventInterval) for i in self.intervals
        ):
            raise ValueError("intervals must be four EventInterval objects")
        object.__setattr__(self, "intervals", tuple(self.intervals))
        if self.clip.frames.dim() != 4:
            raise ValueError("a sample holds a single, unbatched clip")
        if self.target.shape != self.clip.frames.shape[-3:]:
            raise ValueError(
                f"target {tuple(self.target.shape)} does not match clip frames "
                f"{tuple(self.clip.frames.shape[-3:])}"
            )
        for a, b in zip(self.intervals, self.intervals[1:]):
            if a.t_end != b.t_start:
                raise ValueError("event intervals must tile the clip without gaps")

    def voxels(self, n_time_bins: int, reverse_negates_polarity: bool = True) -> ClipVoxels:
        return build_clip_voxels(
            *self.intervals,
            n_bins=n_time_bins,
            height=self.clip.height,
            width=self.clip.width,
            reverse_negates_polarity=reverse_negates_polarity,
        )


class InterpolationNet(nn.Module):
    """Event-assisted middle-frame interpolator.

    forward(frames, voxels) takes the four keyframes (B, 4, 3, H, W) in
    [0, 1] and clip voxels (B, 4, n_time_bins, H, W), and returns the
    unclamped full-resolution prediction (B, 3, H, W); predict() clamps to
    [0, 1] for emission.  Construction reseeds torch's global generator with
    config.seed, so initialization is reproducible per config.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        torch.manual_seed(config.seed)
        self.encoder = EventEncoder(
            n_time_bins=config.n_time_bins,
            msa_dim=config.msa_dim,
            msa_heads=config.msa_heads,
            msa_enabled=config.msa_enabled,
            channels=config.channels,
            smoothnet_depth=config.smoothnet_depth,
        )
        blocks = [
            SynthesisBlock(
                c,
                kernel_taps=config.kernel_taps,
                hidden=c,
                head_depth=d,
            )
            for c, d in zip(config.channels, config.kernel_head_depths)
        ]
        self.syn_blocks = nn.ModuleList(blocks)

    def forward(self, frames: Tensor, voxels: Tensor) -> Tensor:
        if frames.dim() != 5 or voxels.dim() != 5:
            raise ValueError("frames and voxels must be batched 5-d tensors")
        if frames.shape[-2:] != voxels.shape[-2:] or frames.shape[0] != voxels.shape[0]:
            raise ValueError(
                f"frame geometry {tuple(frames.shape)} does not match voxels "
                f"{tuple(voxels.shape)}"
            )
        pyramid = self.encoder(voxels)
        clip = KeyframeClip(frames)
        outs = []
        for level, (f, block) in enumerate(zip(pyramid.levels, self.syn_blocks)):
            scaled = downscale_clip(clip, level)
            outs.append(block(f, scaled.frames).combined)
        return compose_pyramid(*outs)

    @torch.no_grad()
    def predict(self, frames: Tensor, voxels: Tensor) -> Tensor:
        """Emission path: forward pass clamped to [0, 1]."""
        return self.forward(frames, voxels).clamp(0.0, 1.0)

    @torch.no_grad()
    def shape_trace(self, height: int, width: int) -> list:
        """(name, shape) pairs from a dummy forward at the given geometry."""
        frames = torch.zeros(1, 4, 3, height, width)
        voxels = torch.zeros(1, 4, self.config.n_time_bins, height, width)
        rows = [("keyframes", tuple(frames.shape)), ("voxels", tuple(voxels.shape))]
        pyramid = self.encoder(voxels)
        clip = KeyframeClip(frames)
        outs = []
        for level, (f, block) in enumerate(zip(pyramid.levels, self.syn_blocks)):
            rows.append((f"features_level{level}", tuple(f.shape)))
            out = block(f, downscale_clip(clip, level).frames).combined
            rows.append((f"synthesis_level{level}", tuple(out.shape)))
            outs.append(out)
        rows.append(("prediction", tuple(compose_pyramid(*outs).shape)))
        return rows

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters() if p.requires_grad)


def build_model(config: ModelConfig) -> InterpolationNet:
    return InterpolationNet(config)


def build_variant(config: ModelConfig) -> InterpolationNet:
    """Ablation variant with the attention stage replaced by identity."""
    return InterpolationNet(replace(config, msa_enabled=False))


def parameter_count(config: ModelConfig) -> int:
    return InterpolationNet(config).parameter_count()


def save_checkpoint(path, model: InterpolationNet, extra: dict | None = None) -> None:
    """Write a self-describing checkpoint: version, model config, weights,
    plus any extra training state (optimizer, rng, epoch)."""
    payload = {
        "version": CHECKPOINT_VERSION,
        "model_config": model.config.to_dict(),
        "state_dict": model.state_dict(),
    }
    for key, value in (extra or {}).items():
        if key in payload:
            raise ValueError(f"extra checkpoint key {key!r} collides with a core field")
        payload[key] = value
    torch.save(payload, path)


def load_checkpoint(path):
    """Read a checkpoint; returns (model, payload).  Refuses version
    mismatches and malformed payloads."""
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or "version" not in payload:
        raise CheckpointError(f"{path} is not a model checkpoint")
    if payload["version"] != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint version {payload['version']} unsupported "
            f"(expected {CHECKPOINT_VERSION})"
        )
    try:
        config = ModelConfig.from_dict(payload["model_config"])
        model = InterpolationNet(config)
        model.load_state_dict(payload["state_dict"])
    except (KeyError, ValueError, RuntimeError) as exc:
        raise CheckpointError(f"malformed checkpoint {path}: {exc}") from exc
    return model, payload
