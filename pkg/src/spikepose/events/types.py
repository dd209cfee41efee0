"""Event streams, frame sequences and voxel grids."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..numerics import PreconditionError

EVENT_DTYPE = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "u1")])


class EventError(ValueError):
    pass


@dataclass
class EventStream:
    """Events as a structured array with fields ``t`` (µs), ``x``, ``y`` and ``p`` (0/1)."""

    width: int
    height: int
    events: np.ndarray

    def __post_init__(self):
        self.events = np.asarray(self.events, dtype=EVENT_DTYPE)
        if self.events.ndim != 1:
            raise EventError("events must be one-dimensional")
        if not (0 < self.width < 2**16 and 0 < self.height < 2**16):
            raise EventError(f"sensor size {self.width}x{self.height} out of range")
        ev = self.events
        if len(ev):
            if np.any(ev["x"] >= self.width) or np.any(ev["y"] >= self.height):
                raise EventError("event coordinate outside the sensor")
            if np.any(ev["p"] > 1):
                raise EventError("polarity must be 0 or 1")
            if np.any(np.diff(ev["t"].astype(np.int64)) < 0):
                raise EventError("timestamps must be non-decreasing")

    @classmethod
    def from_arrays(cls, width, height, t, x, y, p) -> "EventStream":
        ev = np.empty(len(t), dtype=EVENT_DTYPE)
        ev["t"], ev["x"], ev["y"], ev["p"] = t, x, y, p
        return cls(width, height, ev)

    @classmethod
    def empty(cls, width: int, height: int) -> "EventStream":
        return cls(width, height, np.empty(0, dtype=EVENT_DTYPE))

    def __len__(self) -> int:
        return len(self.events)

    @property
    def t(self) -> np.ndarray:
        return self.events["t"]

    @property
    def duration(self) -> int:
        return int(self.t[-1] - self.t[0]) if len(self) else 0

    def slice_time(self, start: int, stop: int) -> "EventStream":
        """Events with ``start <= t < stop``."""
        lo, hi = np.searchsorted(self.t, [start, stop], side="left")
        return EventStream(self.width, self.height, self.events[lo:hi])


@dataclass
class FrameSequence:
    """Gray frames ``(N, H, W)`` in [0, 1] with strictly increasing µs timestamps."""

    frames: np.ndarray
    timestamps: np.ndarray

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64)
        if self.frames.ndim != 3:
            raise PreconditionError(f"frames must be (N, H, W), got {self.frames.shape}")
        if self.timestamps.shape != (len(self.frames),):
            raise PreconditionError("one timestamp per frame is required")
        if np.any(np.diff(self.timestamps) <= 0):
            raise PreconditionError("frame timestamps must be strictly increasing")
        if self.frames.size and (self.frames.min() < 0 or self.frames.max() > 1):
            raise PreconditionError("intensities must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]


@dataclass
class VoxelGridSequence:
    """Binary ``grid (T, H, W, C)`` plus the packet length and start time in µs."""

    grid: np.ndarray
    window: float
    origin: int

    def __post_init__(self):
        if self.grid.ndim != 4 or self.grid.shape[0] < 1 or self.grid.shape[3] < 1:
            raise PreconditionError(f"voxel grid must be (T, H, W, C) with T, C >= 1, got {self.grid.shape}")
        if not np.all((self.grid == 0) | (self.grid == 1)):
            raise PreconditionError("voxel grid must be binary")

    @property
    def steps(self) -> int:
        return self.grid.shape[0]
