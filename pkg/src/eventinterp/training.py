"""Loss, optimizer schedule, train/eval loops, and metric reporting.

Training is fully seeded: model initialization comes from the model config
seed, batch order from a dedicated generator seeded by the train config, so
two runs with identical configs produce bit-identical loss curves.  A
non-finite loss aborts with the offending batch dumped next to the logs.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from .datagen import DatasetError, DatasetManifest, load_sample
from .metrics import charbonnier_loss, psnr, ssim
from .model import (
    InterpolationNet,
    ModelConfig,
    load_checkpoint,
    save_checkpoint,
)

# Full-scale benchmark numbers (BS-ERGB low resolution, 36-epoch training)
# recorded in eval reports for orientation; desk-scale runs are not
# expected to reach them.
REFERENCE_FULL_SCALE = {"psnr_db": 32.23, "ssim": 0.9581}

LOSSES = ("charbonnier", "l1", "l2")


class TrainingDivergence(RuntimeError):
    """Loss went non-finite; training aborted."""


@dataclass(frozen=True)
class TrainConfig:
    lr_initial: float = 8e-4
    lr_halving_period: int = 8
    epochs: int = 36
    batch_size: int = 6
    beta1: float = 0.9
    beta2: float = 0.999
    loss: str = "charbonnier"
    seed: int = 0
    checkpoint_every: int = 1
    val_every: int = 1
    grad_clip: float = 1.0

    def __post_init__(self):
        if self.lr_initial <= 0 or self.grad_clip <= 0:
            raise ValueError("lr_initial and grad_clip must be positive")
        if self.epochs < 1 or self.batch_size < 1 or self.checkpoint_every < 1:
            raise ValueError("epochs, batch_size, checkpoint_every must be >= 1")
        if self.val_every < 1:
            raise ValueError("val_every must be >= 1")
        if not 1 <= self.lr_halving_period <= self.epochs:
            raise ValueError(
                f"lr_halving_period must lie in [1, epochs], got {self.lr_halving_period}"
            )
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}, got {self.loss!r}")


def lr_schedule(epoch: int, lr_initial: float = 8e-4, halving_period: int = 8) -> float:
    """lr_initial * 0.5 ** floor(epoch / halving_period)."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    return lr_initial * 0.5 ** (epoch // halving_period)


def adamax_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Pure reference AdaMax update (infinity-norm variant of Adam).

    params/grads: lists of numpy arrays.  state None initializes first and
    infinity moments to zero.  Returns (new_params, new_state).  The eps
    folds into the max, matching torch.optim.Adamax, so the two routes can
    be cross-checked numerically.
    """
    params = [np.asarray(p, dtype=np.float64) for p in params]
    grads = [np.asarray(g, dtype=np.float64) for g in grads]
    if state is None:
        state = {
            "step": 0,
            "m": [np.zeros_like(p) for p in params],
            "u": [np.zeros_like(p) for p in params],
        }
    step = state["step"] + 1
    new_m, new_u, new_p = [], [], []
    for p, g, m, u in zip(params, grads, state["m"], state["u"]):
        m = beta1 * m + (1.0 - beta1) * g
        u = np.maximum(beta2 * u, np.abs(g) + eps)
        new_m.append(m)
        new_u.append(u)
        new_p.append(p - lr / (1.0 - beta1**step) * m / u)
    return new_p, {"step": step, "m": new_m, "u": new_u}


def _loss_fn(kind):
    if kind == "charbonnier":
        return charbonnier_loss
    if kind == "l1":
        return lambda a, b: (a - b).abs().mean()
    return lambda a, b: (a - b).pow(2).mean()


def _stack_samples(samples, model_config: ModelConfig):
    frames = torch.stack([s.clip.frames for s in samples])
    targets = torch.stack([s.target for s in samples])
    voxels = torch.stack(
        [
            torch.from_numpy(
                s.voxels(
                    model_config.n_time_bins, model_config.reverse_negates_polarity
                ).data
            ).float()
            for s in samples
        ]
    )
    return frames, voxels, targets


def _load_split(manifest: DatasetManifest, split: str):
    return [load_sample(Path(manifest.root) / e.path) for e in manifest.split(split)]


def _split_psnr(model, frames, voxels, targets, batch_size=4):
    vals = []
    with torch.no_grad():
        for lo in range(0, frames.shape[0], batch_size):
            pred = model.predict(frames[lo : lo + batch_size], voxels[lo : lo + batch_size])
            for p, t in zip(pred, targets[lo : lo + batch_size]):
                vals.append(psnr(p, t))
    return float(np.mean(vals))


def config_fingerprint(model_config: ModelConfig) -> str:
    blob = json.dumps(model_config.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def train(manifest: DatasetManifest, model_config: ModelConfig,
          train_config: TrainConfig, out_dir, resume_from=None) -> dict:
    """Run the training loop; returns history plus checkpoint paths.

    Saves last.pt on the checkpoint cadence (and at the end) and best.pt
    whenever validation PSNR improves.  Validation uses the val split,
    falling back to the train split when no val samples exist.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_samples = _load_split(manifest, "train")
    if not train_samples:
        raise DatasetError("train split is empty")
    val_samples = _load_split(manifest, "val") or train_samples

    model = InterpolationNet(model_config)
    optimizer = torch.optim.Adamax(
        model.parameters(),
        lr=train_config.lr_initial,
        betas=(train_config.beta1, train_config.beta2),
    )
    batch_gen = torch.Generator().manual_seed(train_config.seed)
    start_epoch = 0
    history = []
    iter_losses = []
    best_val = -math.inf

    if resume_from is not None:
        model, payload = load_checkpoint(resume_from)
        optimizer = torch.optim.Adamax(
            model.parameters(),
            lr=train_config.lr_initial,
            betas=(train_config.beta1, train_config.beta2),
        )
        optimizer.load_state_dict(payload["optimizer"])
        batch_gen.set_state(payload["batch_rng"])
        torch.set_rng_state(payload["torch_rng"])
        start_epoch = payload["epoch"] + 1
        history = payload["history"]
        iter_losses = payload["iter_losses"]
        best_val = payload["best_val"]

    # voxelize with the live model's config (it differs from the argument
    # only when resuming from a checkpoint trained under another config)
    frames, voxels, targets = _stack_samples(train_samples, model.config)
    val_frames, val_voxels, val_targets = _stack_samples(val_samples, model.config)

    loss_fn = _loss_fn(train_config.loss)
    last_path = out_dir / "last.pt"
    best_path = out_dir / "best.pt"
    log_path = out_dir / "train_log.jsonl"
    n = frames.shape[0]

    def checkpoint(path, epoch):
        save_checkpoint(
            path,
            model,
            extra={
                "train_config": asdict(train_config),
                "optimizer": optimizer.state_dict(),
                "batch_rng": batch_gen.get_state(),
                "torch_rng": torch.get_rng_state(),
                "epoch": epoch,
                "history": history,
                "iter_losses": iter_losses,
                "best_val": best_val,
            },
        )

    with open(log_path, "a" if resume_from else "w") as logf:
        for epoch in range(start_epoch, train_config.epochs):
            lr = lr_schedule(epoch, train_config.lr_initial, train_config.lr_halving_period)
            for group in optimizer.param_groups:
                group["lr"] = lr
            perm = torch.randperm(n, generator=batch_gen)
            epoch_losses = []
            for it, lo in enumerate(range(0, n, train_config.batch_size)):
                idx = perm[lo : lo + train_config.batch_size]

                def abort(reason):
                    dump = out_dir / "nan_batch.pt"
                    torch.save(
                        {
                            "epoch": epoch,
                            "iteration": it,
                            "indices": idx,
                            "frames": frames[idx],
                            "voxels": voxels[idx],
                            "targets": targets[idx],
                        },
                        dump,
                    )
                    raise TrainingDivergence(
                        f"{reason} at epoch {epoch} iter {it}; batch dumped to {dump}"
                    )

                try:
                    out = model(frames[idx], voxels[idx])
                    loss = loss_fn(out, targets[idx])
                except FloatingPointError as exc:
                    abort(str(exc))
                if not torch.isfinite(loss):
                    abort("non-finite loss")
                optimizer.zero_grad()
                loss.backward()
                torch.nn.utils.clip_grad_norm_(model.parameters(), train_config.grad_clip)
                optimizer.step()
                if not all(torch.isfinite(p).all() for p in model.parameters()):
                    abort("parameters went non-finite after the update")
                value = loss.item()
                epoch_losses.append(value)
                iter_losses.append(value)
                logf.write(
                    json.dumps(
                        {"type": "iter", "epoch": epoch, "iter": it, "loss": value, "lr": lr}
                    )
                    + "\n"
                )

            val_psnr = None
            if (epoch + 1) % train_config.val_every == 0 or epoch == train_config.epochs - 1:
                # a step can leave parameters finite yet large enough that
                # the next forward overflows; surface that as divergence too
                try:
                    val_psnr = _split_psnr(model, val_frames, val_voxels, val_targets)
                except FloatingPointError as exc:
                    dump = out_dir / "nan_batch.pt"
                    torch.save(
                        {
                            "epoch": epoch,
                            "stage": "val",
                            "frames": val_frames,
                            "voxels": val_voxels,
                            "targets": val_targets,
                        },
                        dump,
                    )
                    raise TrainingDivergence(
                        f"{exc} during validation at epoch {epoch}; batch dumped to {dump}"
                    ) from exc
            history.append(
                {
                    "epoch": epoch,
                    "mean_loss": float(np.mean(epoch_losses)),
                    "val_psnr": val_psnr,
                    "lr": lr,
                }
            )
            logf.write(json.dumps({"type": "epoch", **_json_safe(history[-1])}) + "\n")
            logf.flush()

            if val_psnr is not None and val_psnr > best_val:
                best_val = val_psnr
                checkpoint(best_path, epoch)
            if (epoch + 1) % train_config.checkpoint_every == 0 or epoch == train_config.epochs - 1:
                checkpoint(last_path, epoch)

    return {
        "model": model,
        "history": history,
        "iter_losses": iter_losses,
        "best_val": best_val,
        "last": last_path,
        "best": best_path,
        "log": log_path,
    }


@dataclass(frozen=True)
class EvalReport:
    split: str
    per_sample: tuple
    mean_psnr: float
    mean_ssim: float
    parameter_count: int
    config_fingerprint: str
    wall_time_s: float

    def to_dict(self) -> dict:
        return _json_safe(
            {
                "split": self.split,
                "per_sample": list(self.per_sample),
                "mean_psnr": self.mean_psnr,
                "mean_ssim": self.mean_ssim,
                "parameter_count": self.parameter_count,
                "config_fingerprint": self.config_fingerprint,
                "wall_time_s": self.wall_time_s,
                "reference_full_scale": REFERENCE_FULL_SCALE,
            }
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _json_safe(obj):
    """Replace non-finite floats with string sentinels so reports stay
    strictly-parseable JSON."""
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, float) and math.isinf(obj):
        return "inf" if obj > 0 else "-inf"
    if isinstance(obj, float) and math.isnan(obj):
        return "nan"
    return obj


def evaluate(manifest: DatasetManifest, model_or_checkpoint, split: str = "test",
             report_path=None) -> EvalReport:
    """Deterministic metrics over one split; optionally writes JSON."""
    if isinstance(model_or_checkpoint, InterpolationNet):
        model = model_or_checkpoint
    else:
        model, _ = load_checkpoint(model_or_checkpoint)
    samples = _load_split(manifest, split)
    if not samples:
        raise DatasetError(f"split {split!r} is empty")
    started = time.perf_counter()
    frames, voxels, targets = _stack_samples(samples, model.config)
    rows = []
    with torch.no_grad():
        for i in range(frames.shape[0]):
            pred = model.predict(frames[i : i + 1], voxels[i : i + 1])[0]
            rows.append(
                {
                    "path": str(manifest.split(split)[i].path),
                    "psnr": psnr(pred, targets[i]),
                    "ssim": ssim(pred, targets[i]),
                }
            )
    mean_psnr = float(np.mean([r["psnr"] for r in rows]))
    mean_ssim = float(np.mean([r["ssim"] for r in rows]))
    report = EvalReport(
        split=split,
        per_sample=tuple(rows),
        mean_psnr=mean_psnr,
        mean_ssim=mean_ssim,
        parameter_count=model.parameter_count(),
        config_fingerprint=config_fingerprint(model.config),
        wall_time_s=time.perf_counter() - started,
    )
    if report_path is not None:
        Path(report_path).write_text(report.to_json() + "\n")
    return report
