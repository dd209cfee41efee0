"""Binarized space-time histograms of event streams."""

from __future__ import annotations

import numpy as np

from ..numerics import PreconditionError
from .types import EventStream, VoxelGridSequence


def voxelize(
    stream: EventStream,
    T: int,
    H: int,
    W: int,
    C: int = 1,
    threshold: int = 0,
    window: int | None = None,
    origin: int | None = None,
    polarity: bool = False,
) -> VoxelGridSequence:
    """Split the stream into ``T`` equal packets of ``C`` sub-bins each.

    A voxel is 1 iff more than ``threshold`` events land in it.  Without a
    ``window`` the packets tile ``[first, last]`` of the stream; with one they
    are ``window`` µs long from ``origin`` (default: first event) and later
    events are dropped.  With ``polarity`` the channel axis interleaves
    ``C // 2`` sub-bins with the two polarities.
    """
    if min(T, H, W, C) < 1:
        raise PreconditionError("T, H, W and C must be positive")
    if H > stream.height or W > stream.width:
        raise PreconditionError(f"{H}x{W} exceeds the {stream.height}x{stream.width} sensor")
    if threshold < 0:
        raise PreconditionError("threshold must be non-negative")
    if polarity and C % 2:
        raise PreconditionError("polarity mode needs an even channel count")
    bins = C // 2 if polarity else C
    ev = stream.events
    if origin is None:
        origin = int(ev["t"][0]) if len(ev) else 0
    if window is not None and window <= 0:
        raise PreconditionError("window must be positive")
    counts = np.zeros((T, H, W, C), dtype=np.int64)
    if len(ev) == 0:
        return VoxelGridSequence(counts.astype(np.uint8), int(window or 0), int(origin))

    rel = ev["t"].astype(np.int64) - int(origin)
    keep = rel >= 0
    total = T * bins
    if window is None:
        span = int(ev["t"][-1]) - int(origin)
        if span <= 0:
            raise PreconditionError("zero-duration stream needs an explicit window")
        # integer arithmetic keeps bin edges exact; the last event closes the span
        b = np.minimum(rel * total // span, total - 1)
        window_out = span / T
    else:
        b = rel * bins // window
        keep &= b < total
        window_out = window
    b = b[keep]
    step, sub = b // bins, b % bins
    x = ev["x"][keep].astype(np.int64) * W // stream.width
    y = ev["y"][keep].astype(np.int64) * H // stream.height
    ch = 2 * sub + ev["p"][keep] if polarity else sub
    np.add.at(counts, (step, y, x, ch), 1)
    return VoxelGridSequence((counts > threshold).astype(np.uint8), window_out, int(origin))
