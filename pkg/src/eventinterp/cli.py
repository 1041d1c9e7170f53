"""Command-line entry point.

Subcommands: simulate, voxelize, train, eval, interpolate, inspect.  Every
command accepts --config FILE plus any number of --<dotted.key> VALUE
overrides (CLI beats file beats defaults).  Exit codes: 0 success, 1 usage
or config error, 2 data error (missing/corrupt files), 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .config import (
    ConfigError,
    config_hash,
    dump_config,
    load_config,
    to_model_config,
    to_train_config,
)
from .datagen import DatasetError, load_bsergb_style, load_sample, make_dataset
from .events import EventDataError, build_clip_voxels, read_events, voxelize
from .metrics import psnr
from .model import CheckpointError, build_model, load_checkpoint, parameter_count
from .training import TrainingDivergence, evaluate, train

log = logging.getLogger(__name__)


class UsageError(Exception):
    """Bad command line; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="eventinterp", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="command")

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, default=None, help="config file")
        return p

    add("simulate", "generate a synthetic event dataset under data.root")

    vox = add("voxelize", "convert an event file into voxel-grid arrays (.npz)")
    vox.add_argument("--events", type=Path, required=True, help="EVF1 input file")
    vox.add_argument("--out", type=Path, required=True, help="output .npz path")
    vox.add_argument("--height", type=int, default=None)
    vox.add_argument("--width", type=int, default=None)

    tr = add("train", "train a model; run directory is run.out_dir/<config hash>")
    tr.add_argument("--resume", type=Path, default=None, help="checkpoint to resume from")

    ev = add("eval", "evaluate a checkpoint on one split")
    ev.add_argument("--checkpoint", type=Path, default=None,
                    help="defaults to <run dir>/best.pt")
    ev.add_argument("--split", choices=("train", "val", "test"), default="test")

    itp = add("interpolate", "predict the middle frame for one sample directory")
    itp.add_argument("--sample", type=Path, required=True, help="sample directory")
    itp.add_argument("--checkpoint", type=Path, default=None,
                     help="defaults to <run dir>/best.pt")
    itp.add_argument("--out", type=Path, default=None, help="output PNG path")

    add("inspect", "print parameter count, resolved config, and shape trace")
    return parser


def _parse_overrides(tokens) -> list:
    """Leftover tokens become (dotted.key, value) pairs."""
    pairs = []
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--"):
            raise UsageError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, _, value = key.partition("=")
            i += 1
        else:
            if i + 1 >= len(tokens):
                raise UsageError(f"override {tok!r} is missing a value")
            value = tokens[i + 1]
            i += 2
        pairs.append((key, value))
    return pairs


def _run_dir(cfg: dict) -> Path:
    return Path(cfg["run.out_dir"]) / config_hash(cfg)


def _write_png(path: Path, image: torch.Tensor) -> None:
    arr = image.detach().clamp(0.0, 1.0).numpy()
    pixels = (arr * 255.0).round().astype(np.uint8).transpose(1, 2, 0)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(pixels, mode="RGB").save(path)


def cmd_simulate(args, cfg) -> int:
    manifest = make_dataset(
        cfg["data.root"],
        n_train=cfg["data.n_train"],
        n_val=cfg["data.n_val"],
        n_test=cfg["data.n_test"],
        height=cfg["data.height"],
        width=cfg["data.width"],
        seed=cfg["data.seed"],
        n_substeps=cfg["data.n_substeps"],
        threshold=cfg["data.threshold"],
        noise=cfg["data.noise"],
        speed=cfg["data.speed"],
    )
    print(f"dataset root: {manifest.root}")
    print(f"geometry: {manifest.geometry[0]}x{manifest.geometry[1]}")
    for split in ("train", "val", "test"):
        print(f"{split}: {len(manifest.split(split))} samples")
    return 0


def cmd_voxelize(args, cfg) -> int:
    intervals = read_events(args.events)
    height = args.height if args.height is not None else cfg["data.height"]
    width = args.width if args.width is not None else cfg["data.width"]
    n_bins = cfg["model.n_time_bins"]
    arrays = {}
    for i, interval in enumerate(intervals):
        grid = voxelize(interval, n_bins, height, width)
        arrays[f"interval_{i}"] = grid.data
        print(
            f"interval_{i}: {interval.t.size} events, "
            f"voxel sum {grid.data.sum():+.6f}"
        )
    if len(intervals) == 4:
        clip = build_clip_voxels(
            *intervals,
            n_bins=n_bins,
            height=height,
            width=width,
            reverse_negates_polarity=cfg["model.reverse_negates_polarity"],
        )
        arrays["clip"] = clip.data
        print(f"clip: shape {clip.data.shape}")
    args.out.parent.mkdir(parents=True, exist_ok=True)
    np.savez(args.out, **arrays)
    print(f"wrote {args.out}")
    return 0


def cmd_train(args, cfg) -> int:
    run_dir = _run_dir(cfg)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.txt").write_text(dump_config(cfg))
    manifest = load_bsergb_style(cfg["data.root"])
    result = train(
        manifest,
        to_model_config(cfg),
        to_train_config(cfg),
        run_dir,
        resume_from=args.resume,
    )
    final = result["history"][-1]
    print(f"run dir: {run_dir}")
    print(f"final epoch {final['epoch']}: loss {final['mean_loss']:.6f}, "
          f"val PSNR {final['val_psnr']:.2f} dB")
    print(f"best val PSNR: {result['best_val']:.2f} dB")
    print(f"checkpoints: {result['best']} {result['last']}")
    return 0


def cmd_eval(args, cfg) -> int:
    run_dir = _run_dir(cfg)
    checkpoint = args.checkpoint if args.checkpoint is not None else run_dir / "best.pt"
    manifest = load_bsergb_style(cfg["data.root"])
    run_dir.mkdir(parents=True, exist_ok=True)
    report_path = run_dir / f"eval_{args.split}.json"
    report = evaluate(manifest, checkpoint, split=args.split, report_path=report_path)
    print(report.to_json())
    return 0


def cmd_interpolate(args, cfg) -> int:
    run_dir = _run_dir(cfg)
    checkpoint = args.checkpoint if args.checkpoint is not None else run_dir / "best.pt"
    model, _ = load_checkpoint(checkpoint)
    sample_dir = Path(args.sample)
    has_target = (sample_dir / "frame_2.png").exists()
    sample = load_sample(sample_dir, require_target=False)
    voxels = torch.from_numpy(
        sample.voxels(
            model.config.n_time_bins, model.config.reverse_negates_polarity
        ).data
    ).float()
    prediction = model.predict(
        sample.clip.frames.unsqueeze(0), voxels.unsqueeze(0)
    )[0]
    out = args.out if args.out is not None else run_dir / f"{sample_dir.name}_interp.png"
    _write_png(out, prediction)
    print(f"wrote {out}")
    if has_target:
        diff = (prediction - sample.target).abs()
        diff_path = out.with_name(out.stem + "_absdiff.png")
        _write_png(diff_path, diff)
        print(f"wrote {diff_path}")
        print(f"PSNR vs ground truth: {psnr(prediction, sample.target):.2f} dB")
    return 0


def cmd_inspect(args, cfg) -> int:
    model_config = to_model_config(cfg)
    print(f"parameters: {parameter_count(model_config)}")
    print(f"config hash: {config_hash(cfg)}")
    print(dump_config(cfg), end="")
    model = build_model(model_config)
    for name, shape in model.shape_trace(cfg["data.height"], cfg["data.width"]):
        print(f"{name}: {shape}")
    return 0


_COMMANDS = {
    "simulate": cmd_simulate,
    "voxelize": cmd_voxelize,
    "train": cmd_train,
    "eval": cmd_eval,
    "interpolate": cmd_interpolate,
    "inspect": cmd_inspect,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = _build_parser()
    try:
        args, leftover = parser.parse_known_args(argv)
        if args.command is None:
            raise UsageError("a command is required (see --help)")
        overrides = _parse_overrides(leftover)
        cfg = load_config(args.config, overrides)
        return _COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (DatasetError, EventDataError, CheckpointError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except TrainingDivergence as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
