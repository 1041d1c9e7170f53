"""Event-camera-assisted video frame interpolation.

Four RGB keyframes plus the event streams between them go in; the missing
middle frame comes out.  Events are voxelized, encoded into a feature
pyramid with temporal attention and signed-magnitude pooling, and fused
with the keyframes through predicted deformable kernels.
"""

__version__ = "0.1.0"

from .events import (
    ClipVoxels,
    Event,
    EventDataError,
    EventFileError,
    EventInterval,
    VoxelGrid,
    build_clip_voxels,
    read_events,
    time_reverse,
    voxelize,
    write_events,
)
from .model import (
    CheckpointError,
    ClipSample,
    InterpolationNet,
    ModelConfig,
    build_model,
    build_variant,
    load_checkpoint,
    parameter_count,
    save_checkpoint,
)
from .datagen import (
    DatasetError,
    DatasetManifest,
    SceneSpec,
    Sprite,
    load_bsergb_style,
    load_sample,
    make_clip,
    make_dataset,
    random_scene,
    render_sequence,
    simulate_events,
    write_sample,
)
from .metrics import charbonnier_loss, psnr, ssim
from .training import (
    EvalReport,
    TrainConfig,
    TrainingDivergence,
    adamax_step,
    evaluate,
    lr_schedule,
    train,
)
from .config import config_hash, dump_config, load_config

__all__ = [
    "CheckpointError",
    "ClipSample",
    "ClipVoxels",
    "DatasetError",
    "DatasetManifest",
    "EvalReport",
    "Event",
    "EventDataError",
    "EventFileError",
    "EventInterval",
    "InterpolationNet",
    "ModelConfig",
    "SceneSpec",
    "Sprite",
    "TrainConfig",
    "TrainingDivergence",
    "VoxelGrid",
    "adamax_step",
    "build_clip_voxels",
    "build_model",
    "build_variant",
    "charbonnier_loss",
    "config_hash",
    "dump_config",
    "evaluate",
    "load_bsergb_style",
    "load_checkpoint",
    "load_config",
    "load_sample",
    "lr_schedule",
    "make_clip",
    "make_dataset",
    "parameter_count",
    "psnr",
    "random_scene",
    "read_events",
    "render_sequence",
    "save_checkpoint",
    "simulate_events",
    "ssim",
    "time_reverse",
    "train",
    "voxelize",
    "write_events",
    "write_sample",
    "__version__",
]
