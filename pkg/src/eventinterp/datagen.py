"""Synthetic event-camera clip generator and dataset IO.

Scenes are anti-aliased sprites (disks and squares) moving along polynomial
or sinusoidal trajectories over a gray background.  Events come from the
standard threshold-crossing camera model: per pixel, each time the log-luma
leaves the last reference level by the contrast threshold C an event fires
with linearly interpolated timestamp, and the reference moves one threshold
step.

On-disk layout (one directory per sample, BS-ERGB style):
    root/{train,val,test}/<sample>/frame_{0..4}.png   frame_2 = ground truth
    root/{train,val,test}/<sample>/events_{0..3}.evf  one interval per gap
plus a line-delimited manifest.txt index at the root.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .events import EventInterval, read_events, write_events
from .model import ClipSample
from .synthesis import KeyframeClip

log = logging.getLogger(__name__)

DEFAULT_KEYFRAME_TIMES = (0, 25_000, 50_000, 75_000, 100_000)
DEFAULT_THRESHOLD = 0.15
DEFAULT_SUBSTEPS = 32
LUMA = (0.299, 0.587, 0.114)
LOG_FLOOR = 1e-3
SPLITS = ("train", "val", "test")


class DatasetError(ValueError):
    """Missing, empty, or structurally unusable dataset."""


# ---------------------------------------------------------------------------
# scene specification


@dataclass(frozen=True)
class Sprite:
    """One moving primitive.  path_x/path_y are coefficient tuples:
    polynomial c0 + c1*tau + c2*tau^2 + ..., or sinusoidal
    (center, amplitude, frequency, phase) -> center + a*sin(2*pi*f*tau + p).
    tau is clip-normalized time in [0, 1]; positions are in pixels."""

    shape: str
    color: tuple
    size: float
    kind: str
    path_x: tuple
    path_y: tuple

    def __post_init__(self):
        if self.shape not in ("disk", "square"):
            raise ValueError(f"unknown sprite shape {self.shape!r}")
        if self.kind not in ("polynomial", "sinusoidal"):
            raise ValueError(f"unknown trajectory kind {self.kind!r}")
        if len(self.color) != 3 or any(not 0 <= c <= 1 for c in self.color):
            raise ValueError("color must be three values in [0, 1]")
        if self.size <= 0:
            raise ValueError("sprite size must be positive")
        if self.kind == "sinusoidal" and (len(self.path_x) != 4 or len(self.path_y) != 4):
            raise ValueError("sinusoidal paths need (center, amplitude, freq, phase)")

    def position(self, tau: float):
        return _eval_path(self.kind, self.path_x, tau), _eval_path(
            self.kind, self.path_y, tau
        )


def _eval_path(kind, coeffs, tau):
    if kind == "polynomial":
        return float(sum(c * tau**i for i, c in enumerate(coeffs)))
    center, amp, freq, phase = coeffs
    return float(center + amp * math.sin(2 * math.pi * freq * tau + phase))


@dataclass(frozen=True)
class SceneSpec:
    height: int
    width: int
    sprites: tuple
    background: float = 0.1
    noise: float = 0.0
    threshold: float = DEFAULT_THRESHOLD
    seed: int = 0

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValueError("canvas must be positive")
        if self.threshold <= 0:
            raise ValueError("event threshold must be positive")
        if not 0 <= self.background <= 1 or self.noise < 0:
            raise ValueError("background must be in [0, 1] and noise non-negative")
        object.__setattr__(self, "sprites", tuple(self.sprites))
        for s in self.sprites:
            for tau in np.linspace(0.0, 1.0, 33):
                x, y = s.position(float(tau))
                if (
                    x + s.size < 0
                    or x - s.size > self.width - 1
                    or y + s.size < 0
                    or y - s.size > self.height - 1
                ):
                    raise ValueError(
                        f"sprite leaves the canvas entirely at tau={tau:.3f}"
                    )


# ---------------------------------------------------------------------------
# rendering


def render_frame(spec: SceneSpec, tau: float, rng=None) -> np.ndarray:
    """One (3, H, W) float frame in [0, 1] at clip-normalized time tau."""
    ys, xs = np.mgrid[0 : spec.height, 0 : spec.width].astype(np.float64)
    frame = np.full((3, spec.height, spec.width), spec.background, dtype=np.float64)
    for s in spec.sprites:
        cx, cy = s.position(tau)
        if s.shape == "disk":
            dist = np.hypot(xs - cx, ys - cy)
        else:
            dist = np.maximum(np.abs(xs - cx), np.abs(ys - cy))
        cover = np.clip(s.size - dist + 0.5, 0.0, 1.0)  # one-pixel soft edge
        for c in range(3):
            frame[c] = frame[c] * (1.0 - cover) + s.color[c] * cover
    if rng is not None and spec.noise > 0:
        frame = frame + rng.normal(0.0, spec.noise, size=frame.shape)
    return np.clip(frame, 0.0, 1.0)


def render_sequence(spec: SceneSpec, n_substeps: int, keyframe_times=DEFAULT_KEYFRAME_TIMES):
    """Render the whole clip on a fine time grid: n_substeps segments per
    keyframe gap.  Returns (times, frames) with times int64 microseconds of
    length 4*n_substeps + 1 and frames (len, 3, H, W)."""
    if n_substeps < 16:
        raise ValueError(f"need at least 16 substeps per gap, got {n_substeps}")
    kf = [int(t) for t in keyframe_times]
    if len(kf) != 5 or any(b <= a for a, b in zip(kf, kf[1:])):
        raise ValueError("keyframe_times must be five strictly increasing instants")
    times = []
    for a, b in zip(kf, kf[1:]):
        if b - a < n_substeps:
            raise ValueError("keyframe gap too short for the substep grid")
        times.extend(int(round(a + j * (b - a) / n_substeps)) for j in range(n_substeps))
    times.append(kf[-1])
    times = np.asarray(times, dtype=np.int64)
    span = kf[-1] - kf[0]
    rng = np.random.default_rng(spec.seed) if spec.noise > 0 else None
    frames = np.stack(
        [render_frame(spec, (t - kf[0]) / span, rng) for t in times]
    )
    return times, frames


# ---------------------------------------------------------------------------
# event simulation


def simulate_events(fine_frames: np.ndarray, threshold: float, t0: int, t1: int) -> EventInterval:
    """Threshold-crossing event simulation over uniformly spaced frames.

    fine_frames: (N, 3, H, W) in [0, 1] covering [t0, t1].  Per pixel the
    log of luma is tracked against a reference that advances by one
    threshold step per emitted event; timestamps interpolate linearly
    inside each frame gap.
    """
    if threshold <= 0:
        raise ValueError(f"threshold must be positive, got {threshold}")
    frames = np.asarray(fine_frames, dtype=np.float64)
    if frames.ndim != 4 or frames.shape[1] != 3 or frames.shape[0] < 2:
        raise ValueError(f"need (N>=2, 3, H, W) frames, got {frames.shape}")
    if t1 <= t0:
        raise ValueError("t1 must exceed t0")
    luma = np.tensordot(np.asarray(LUMA), frames, axes=([0], [1]))
    levels = np.log(luma + LOG_FLOOR)
    n = frames.shape[0]
    step_us = (t1 - t0) / (n - 1)

    ref = levels[0].copy()
    ts, xs, ys, ps = [], [], [], []
    for i in range(n - 1):
        cur, nxt = levels[i], levels[i + 1]
        delta = nxt - ref
        count = np.floor(np.abs(delta) / threshold).astype(np.int64)
        fy, fx = np.nonzero(count)
        for py, px in zip(fy, fx):
            sgn = 1 if delta[py, px] > 0 else -1
            li, ln, r = cur[py, px], nxt[py, px], ref[py, px]
            for j in range(1, count[py, px] + 1):
                level = r + sgn * threshold * j
                frac = (level - li) / (ln - li)
                t = int(t0 + (i + frac) * step_us)
                ts.append(min(max(t, t0), t1 - 1))
                xs.append(px)
                ys.append(py)
                ps.append(sgn)
        ref += np.sign(delta) * threshold * count

    order = np.argsort(np.asarray(ts, dtype=np.int64), kind="stable")
    return EventInterval(
        int(t0),
        int(t1),
        t=np.asarray(ts, dtype=np.int64)[order],
        x=np.asarray(xs, dtype=np.int64)[order],
        y=np.asarray(ys, dtype=np.int64)[order],
        polarity=np.asarray(ps, dtype=np.int64)[order],
    )


def make_clip(spec: SceneSpec, keyframe_times=DEFAULT_KEYFRAME_TIMES,
              n_substeps: int = DEFAULT_SUBSTEPS) -> ClipSample:
    """Render one clip and assemble keyframes, middle target, and the four
    event intervals between the five keyframe instants."""
    times, frames = render_sequence(spec, n_substeps, keyframe_times)
    kf_idx = [g * n_substeps for g in range(5)]
    intervals = []
    for g in range(4):
        lo, hi = kf_idx[g], kf_idx[g + 1]
        intervals.append(
            simulate_events(
                frames[lo : hi + 1], spec.threshold, int(times[lo]), int(times[hi])
            )
        )
    keyframes = np.stack([frames[kf_idx[g]] for g in (0, 1, 3, 4)])
    return ClipSample(
        clip=KeyframeClip(torch.from_numpy(keyframes).float()),
        intervals=tuple(intervals),
        target=torch.from_numpy(frames[kf_idx[2]]).float(),
    )


# ---------------------------------------------------------------------------
# random scenes


def random_scene(seed: int, height: int = 64, width: int = 64, n_sprites=(2, 4),
                 speed: float = 1.0, threshold: float = DEFAULT_THRESHOLD,
                 noise: float = 0.0) -> SceneSpec:
    """Seeded random scene with sprites whose trajectories stay on canvas."""
    rng = np.random.default_rng(seed)
    count = int(rng.integers(n_sprites[0], n_sprites[1] + 1))
    scale = min(height, width) / 64.0
    sprites = []
    for _ in range(count):
        size = float(rng.uniform(3.0, 8.0) * scale)
        margin = size + 2.0
        x0 = float(rng.uniform(margin + 4 * speed, width - 1 - margin - 4 * speed))
        y0 = float(rng.uniform(margin + 4 * speed, height - 1 - margin - 4 * speed))
        kind = str(rng.choice(["polynomial", "sinusoidal"]))
        if kind == "polynomial":
            angle = rng.uniform(0, 2 * math.pi)
            dist = rng.uniform(2.0, 5.0) * speed * scale
            bend = rng.uniform(-1.0, 1.0) * speed * scale
            path_x = (x0, dist * math.cos(angle), bend)
            path_y = (y0, dist * math.sin(angle), -bend)
        else:
            amp_x = float(rng.uniform(1.0, 3.0) * speed * scale)
            amp_y = float(rng.uniform(1.0, 3.0) * speed * scale)
            freq = float(rng.choice([0.5, 1.0]))
            path_x = (x0, amp_x, freq, float(rng.uniform(0, 2 * math.pi)))
            path_y = (y0, amp_y, freq, float(rng.uniform(0, 2 * math.pi)))
        sprites.append(
            Sprite(
                shape=str(rng.choice(["disk", "square"])),
                color=tuple(rng.uniform(0.3, 1.0, size=3).round(4)),
                size=size,
                kind=kind,
                path_x=path_x,
                path_y=path_y,
            )
        )
    return SceneSpec(
        height=height,
        width=width,
        sprites=tuple(sprites),
        background=float(rng.uniform(0.05, 0.15)),
        noise=noise,
        threshold=threshold,
        seed=int(rng.integers(0, 2**31)),
    )


# ---------------------------------------------------------------------------
# dataset IO


@dataclass(frozen=True)
class ManifestEntry:
    path: Path
    split: str


@dataclass(frozen=True)
class DatasetManifest:
    root: Path
    geometry: tuple
    entries: tuple

    def split(self, tag: str):
        return [e for e in self.entries if e.split == tag]


def _to_png(path: Path, image: np.ndarray):
    arr = (np.clip(image, 0, 1) * 255.0).round().astype(np.uint8)
    Image.fromarray(arr.transpose(1, 2, 0), mode="RGB").save(path)


def _from_png(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    return arr.transpose(2, 0, 1)


def write_sample(sample_dir: Path, sample: ClipSample) -> None:
    sample_dir = Path(sample_dir)
    sample_dir.mkdir(parents=True, exist_ok=True)
    frames = sample.clip.frames.numpy()
    disk_order = [frames[0], frames[1], sample.target.numpy(), frames[2], frames[3]]
    for i, img in enumerate(disk_order):
        _to_png(sample_dir / f"frame_{i}.png", img)
    for g, interval in enumerate(sample.intervals):
        write_events([interval], sample_dir / f"events_{g}.evf")


def load_sample(sample_dir: Path, crop=None, require_target: bool = True) -> ClipSample:
    """Read one sample directory; optional (height, width) center crop
    applied to frames and events alike.

    With require_target=False a missing frame_2.png is tolerated and the
    target comes back as zeros (inference-only directories).
    """
    sample_dir = Path(sample_dir)
    images = []
    for i in range(5):
        path = sample_dir / f"frame_{i}.png"
        if i == 2 and not require_target and not path.exists():
            images.append(None)
            continue
        images.append(_from_png(path))
    if images[2] is None:
        images[2] = np.zeros_like(images[0])
    if any(img.shape != images[0].shape for img in images):
        raise DatasetError(f"{sample_dir}: frames disagree on geometry")
    intervals = []
    for g in range(4):
        batch = read_events(sample_dir / f"events_{g}.evf")
        if len(batch) != 1:
            raise DatasetError(
                f"{sample_dir}: events_{g}.evf holds {len(batch)} intervals, expected 1"
            )
        intervals.append(batch[0])
    h, w = images[0].shape[1:]
    if crop is not None:
        ch, cw = crop
        if ch > h or cw > w:
            raise DatasetError(f"{sample_dir}: cannot crop {h}x{w} to {ch}x{cw}")
        oy, ox = (h - ch) // 2, (w - cw) // 2
        images = [img[:, oy : oy + ch, ox : ox + cw] for img in images]
        intervals = [_crop_interval(i, ox, oy, cw, ch) for i in intervals]
    keyframes = np.stack([images[i] for i in (0, 1, 3, 4)])
    return ClipSample(
        clip=KeyframeClip(torch.from_numpy(keyframes).float()),
        intervals=tuple(intervals),
        target=torch.from_numpy(images[2]).float(),
    )


def _crop_interval(interval: EventInterval, ox, oy, cw, ch) -> EventInterval:
    keep = (
        (interval.x >= ox)
        & (interval.x < ox + cw)
        & (interval.y >= oy)
        & (interval.y < oy + ch)
    )
    return EventInterval(
        interval.t_start,
        interval.t_end,
        t=interval.t[keep],
        x=interval.x[keep] - ox,
        y=interval.y[keep] - oy,
        polarity=interval.polarity[keep],
    )


def make_dataset(root: Path, n_train: int = 8, n_val: int = 2, n_test: int = 2,
                 height: int = 64, width: int = 64, seed: int = 0,
                 n_substeps: int = DEFAULT_SUBSTEPS, threshold: float = DEFAULT_THRESHOLD,
                 noise: float = 0.0, speed: float = 1.0) -> DatasetManifest:
    """Generate a synthetic dataset under root and write its manifest."""
    root = Path(root)
    counts = {"train": n_train, "val": n_val, "test": n_test}
    ss = np.random.SeedSequence(seed)
    children = iter(ss.generate_state(sum(counts.values()) * 2))
    entries = []
    for split in SPLITS:
        for i in range(counts[split]):
            scene = random_scene(
                int(next(children)),
                height=height,
                width=width,
                speed=speed,
                threshold=threshold,
                noise=noise,
            )
            sample = make_clip(scene, n_substeps=n_substeps)
            rel = Path(split) / f"clip_{i:05d}"
            write_sample(root / rel, sample)
            entries.append(ManifestEntry(path=rel, split=split))
    manifest = DatasetManifest(root=root, geometry=(height, width), entries=tuple(entries))
    write_manifest(manifest)
    return manifest


def write_manifest(manifest: DatasetManifest) -> None:
    lines = [f"geometry\t{manifest.geometry[0]}\t{manifest.geometry[1]}"]
    lines += [f"{e.split}\t{e.path.as_posix()}" for e in manifest.entries]
    (Path(manifest.root) / "manifest.txt").write_text("\n".join(lines) + "\n")


def load_bsergb_style(root: Path) -> DatasetManifest:
    """Scan a dataset directory in the documented layout.

    Samples missing files or disagreeing on geometry are skipped with a
    logged warning; an empty result is an error.
    """
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} does not exist")
    entries = []
    geometry = None
    for split in SPLITS:
        split_dir = root / split
        if not split_dir.is_dir():
            continue
        for sample_dir in sorted(p for p in split_dir.iterdir() if p.is_dir()):
            wanted = [f"frame_{i}.png" for i in range(5)]
            wanted += [f"events_{g}.evf" for g in range(4)]
            missing = [f for f in wanted if not (sample_dir / f).exists()]
            if missing:
                log.warning("skipping %s: missing %s", sample_dir, ", ".join(missing))
                continue
            try:
                with Image.open(sample_dir / "frame_0.png") as img:
                    size = (img.height, img.width)
            except OSError as exc:
                log.warning("skipping %s: unreadable frame_0 (%s)", sample_dir, exc)
                continue
            if geometry is None:
                geometry = size
            elif size != geometry:
                log.warning(
                    "skipping %s: geometry %s != dataset %s", sample_dir, size, geometry
                )
                continue
            entries.append(ManifestEntry(path=sample_dir.relative_to(root), split=split))
    if not entries:
        raise DatasetError(f"no usable samples under {root}")
    return DatasetManifest(root=root, geometry=geometry, entries=tuple(entries))
