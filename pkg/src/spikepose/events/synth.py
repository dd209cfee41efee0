"""Brightness-change event synthesis from intensity frames."""

from __future__ import annotations

import numpy as np

from ..numerics import PreconditionError
from .types import EVENT_DTYPE, EventStream, FrameSequence

LOG_EPS = 1e-3
# absorbs rounding when a change lands exactly on a multiple of the threshold
_CROSS_TOL = 1e-9


def synthesize_events(frames: FrameSequence, contrast_threshold: float = 0.5, eps: float = LOG_EPS) -> EventStream:
    """Emit events whenever a pixel's log intensity moves ``k`` thresholds from its reference.

    Events carry the timestamp of the frame that caused them and are emitted
    in raster order within a frame.
    """
    if contrast_threshold <= 0:
        raise PreconditionError("contrast threshold must be positive")
    if len(frames) < 2:
        raise PreconditionError("at least two frames are needed")
    ref = np.log(frames.frames[0] + eps)
    chunks = []
    for i in range(1, len(frames)):
        diff = np.log(frames.frames[i] + eps) - ref
        k = np.floor(np.abs(diff) / contrast_threshold + _CROSS_TOL).astype(np.int64)
        ys, xs = np.nonzero(k)
        if len(ys) == 0:
            continue
        n = k[ys, xs]
        sign = np.sign(diff[ys, xs])
        ref[ys, xs] += n * contrast_threshold * sign
        ev = np.empty(int(n.sum()), dtype=EVENT_DTYPE)
        ev["t"] = frames.timestamps[i]
        ev["x"] = np.repeat(xs, n)
        ev["y"] = np.repeat(ys, n)
        ev["p"] = np.repeat(sign > 0, n)
        chunks.append(ev)
    events = np.concatenate(chunks) if chunks else np.empty(0, dtype=EVENT_DTYPE)
    return EventStream(frames.width, frames.height, events)
