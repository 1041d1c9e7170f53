"""Event streams and their voxel-grid representation.

An event camera emits asynchronous (t, x, y, polarity) records whenever the
log brightness at a pixel crosses a threshold.  This module holds the raw
records between two keyframes (:class:`EventInterval`), converts them into
dense voxel grids with bilinear temporal accumulation, applies time-reversal
to the post-midpoint intervals, and reads/writes the EVF1 container format.

All functions here are pure: inputs are never mutated and the returned grids
are freshly allocated, so concurrent calls are safe.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np


class EventDataError(ValueError):
    """Raised when event records violate the stream invariants."""


class EventFileError(EventDataError):
    """Raised for malformed or truncated event files."""


class Event(NamedTuple):
    """One camera event: microsecond timestamp, pixel position, polarity."""

    t: int
    x: int
    y: int
    polarity: int


@dataclass(frozen=True)
class EventInterval:
    """Events between two keyframe instants, sorted by timestamp.

    Timestamps are integer microseconds in the half-open range
    [t_start, t_end); an event stamped exactly t_end belongs to the next
    interval.  Arrays are columnar for speed; use :meth:`events` for the
    record view.
    """

    t_start: int
    t_end: int
    t: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    x: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int32))
    y: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int32))
    polarity: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int8))

    def __post_init__(self):
        object.__setattr__(self, "t", np.asarray(self.t, dtype=np.int64))
        object.__setattr__(self, "x", np.asarray(self.x, dtype=np.int32))
        object.__setattr__(self, "y", np.asarray(self.y, dtype=np.int32))
        object.__setattr__(self, "polarity", np.asarray(self.polarity, dtype=np.int8))
        n = self.t.size
        if not (self.x.size == self.y.size == self.polarity.size == n):
            raise EventDataError("event columns have mismatched lengths")
        if self.t_start < 0:
            raise EventDataError(f"t_start must be non-negative, got {self.t_start}")
        if self.t_end <= self.t_start:
            raise EventDataError(
                f"interval must have positive duration, got "
                f"[{self.t_start}, {self.t_end})"
            )
        if n:
            if np.any(np.diff(self.t) < 0):
                raise EventDataError("event timestamps must be non-decreasing")
            if self.t[0] < self.t_start or self.t[-1] >= self.t_end:
                raise EventDataError(
                    "event timestamps must lie in [t_start, t_end)"
                )
            if not np.all(np.abs(self.polarity) == 1):
                raise EventDataError("polarity must be +1 or -1")
            if np.any(self.x < 0) or np.any(self.y < 0):
                raise EventDataError("event coordinates must be non-negative")

    @classmethod
    def from_events(cls, t_start: int, t_end: int, events: Sequence[Event]) -> "EventInterval":
        if not events:
            return cls(t_start, t_end)
        return cls(
            t_start,
            t_end,
            t=np.array([e.t for e in events], dtype=np.int64),
            x=np.array([e.x for e in events], dtype=np.int32),
            y=np.array([e.y for e in events], dtype=np.int32),
            polarity=np.array([e.polarity for e in events], dtype=np.int8),
        )

    def __len__(self) -> int:
        return int(self.t.size)

    def events(self) -> list[Event]:
        return [
            Event(int(t), int(x), int(y), int(p))
            for t, x, y, p in zip(self.t, self.x, self.y, self.polarity)
        ]

    def polarity_sum(self) -> int:
        return int(self.polarity.sum(dtype=np.int64))


@dataclass(frozen=True)
class VoxelGrid:
    """Dense (n_bins, H, W) accumulation of an event interval."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3:
            raise EventDataError(f"voxel grid must be 3-d, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise EventDataError("voxel grid contains non-finite entries")
        object.__setattr__(self, "data", data)

    @property
    def n_bins(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class ClipVoxels:
    """Stacked (4, n_bins, H, W) voxel tensor: the network's event input.

    Slots 0 and 1 hold the pre-midpoint intervals as accumulated; slots 2
    and 3 hold the post-midpoint intervals time-reversed.
    """

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 4 or data.shape[0] != 4:
            raise EventDataError(
                f"clip voxels must have shape (4, n_bins, H, W), got {data.shape}"
            )
        object.__setattr__(self, "data", data)


def voxelize(interval: EventInterval, n_bins: int, height: int, width: int) -> VoxelGrid:
    """Accumulate an interval into an (n_bins, height, width) voxel grid.

    Each event deposits its polarity into the two temporally nearest bins
    with bilinear weights max(0, 1 - |b - t*|), where
    t* = (t - t_start) / (t_end - t_start) * (n_bins - 1).  Spatially the
    deposit lands exactly at (y, x); out-of-bounds events are an error,
    never clamped.
    """
    if n_bins < 1:
        raise ValueError(f"n_bins must be positive, got {n_bins}")
    if height < 1 or width < 1:
        raise ValueError(f"grid size must be positive, got {height}x{width}")
    grid = np.zeros((n_bins, height, width), dtype=np.float64)
    if len(interval) == 0:
        return VoxelGrid(grid)
    if np.any(interval.x >= width) or np.any(interval.y >= height):
        raise EventDataError(
            f"event coordinates exceed the {height}x{width} sensor bounds"
        )

    duration = float(interval.t_end - interval.t_start)
    tstar = (interval.t - interval.t_start).astype(np.float64) / duration * (n_bins - 1)
    left = np.floor(tstar).astype(np.int64)
    frac = tstar - left
    pol = interval.polarity.astype(np.float64)
    ys = interval.y.astype(np.int64)
    xs = interval.x.astype(np.int64)

    np.add.at(grid, (left, ys, xs), pol * (1.0 - frac))
    right = left + 1
    ok = right <= n_bins - 1
    np.add.at(grid, (right[ok], ys[ok], xs[ok]), pol[ok] * frac[ok])
    return VoxelGrid(grid)


def time_reverse(grid: VoxelGrid, negate_polarity: bool = True) -> VoxelGrid:
    """Flip the temporal axis; by default also negate the accumulated
    polarities (a brightness increase seen backward is a decrease)."""
    flipped = grid.data[::-1].copy()
    if negate_polarity:
        flipped = -flipped
    return VoxelGrid(flipped)


def build_clip_voxels(
    i1: EventInterval,
    i2: EventInterval,
    i3: EventInterval,
    i4: EventInterval,
    n_bins: int,
    height: int,
    width: int,
    reverse_negates_polarity: bool = True,
) -> ClipVoxels:
    """Voxelize the four keyframe-gap intervals into the (4, n_bins, H, W)
    network input.  The two post-midpoint intervals enter time-reversed."""
    grids = [voxelize(i, n_bins, height, width) for i in (i1, i2, i3, i4)]
    grids[2] = time_reverse(grids[2], reverse_negates_polarity)
    grids[3] = time_reverse(grids[3], reverse_negates_polarity)
    return ClipVoxels(np.stack([g.data for g in grids]))


# ---------------------------------------------------------------------------
# EVF1 file format
#
# Little-endian binary: magic "EVF1", u32 interval count; per interval a
# header {u64 t_start_us, u64 t_end_us, u32 n_events} followed by n_events
# packed records {u64 t_us, u16 x, u16 y, i8 polarity, u8 pad}.

_MAGIC = b"EVF1"
_HEADER = struct.Struct("<QQI")
_RECORD_DTYPE = np.dtype(
    [("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "<i1"), ("pad", "<u1")]
)


def write_events(intervals: Sequence[EventInterval], path) -> None:
    """Write intervals to an EVF1 file (overwrites)."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(intervals)))
        for iv in intervals:
            fh.write(_HEADER.pack(iv.t_start, iv.t_end, len(iv)))
            rec = np.empty(len(iv), dtype=_RECORD_DTYPE)
            rec["t"] = iv.t
            rec["x"] = iv.x
            rec["y"] = iv.y
            rec["p"] = iv.polarity
            rec["pad"] = 0
            fh.write(rec.tobytes())


def read_events(path) -> list[EventInterval]:
    """Read an EVF1 file back into intervals, validating every record."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise EventFileError(f"{path}: truncated header")
    if raw[:4] != _MAGIC:
        raise EventFileError(f"{path}: bad magic {raw[:4]!r}")
    (count,) = struct.unpack_from("<I", raw, 4)
    offset = 8
    intervals = []
    for idx in range(count):
        if offset + _HEADER.size > len(raw):
            raise EventFileError(f"{path}: truncated at interval {idx} header")
        t_start, t_end, n = _HEADER.unpack_from(raw, offset)
        offset += _HEADER.size
        nbytes = n * _RECORD_DTYPE.itemsize
        if offset + nbytes > len(raw):
            raise EventFileError(f"{path}: truncated in interval {idx} records")
        rec = np.frombuffer(raw, dtype=_RECORD_DTYPE, count=n, offset=offset)
        offset += nbytes
        try:
            intervals.append(
                EventInterval(
                    int(t_start),
                    int(t_end),
                    t=rec["t"].astype(np.int64),
                    x=rec["x"].astype(np.int32),
                    y=rec["y"].astype(np.int32),
                    polarity=rec["p"].astype(np.int8),
                )
            )
        except EventDataError as exc:
            raise EventFileError(f"{path}: interval {idx}: {exc}") from exc
    if offset != len(raw):
        raise EventFileError(f"{path}: {len(raw) - offset} trailing bytes")
    return intervals
