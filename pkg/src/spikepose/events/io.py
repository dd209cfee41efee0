"""Bit-exact EVS1 event file reader and writer."""

from __future__ import annotations

import os
import struct

import numpy as np

from .types import EVENT_DTYPE, EventError, EventStream

MAGIC = b"EVS1"
VERSION = 1
HEADER = struct.Struct("<4sHHHQ")
RECORD_DTYPE = np.dtype(
    [("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "u1"), ("pad", "V3")]
)
assert HEADER.size == 18 and RECORD_DTYPE.itemsize == 16


class EventFormatError(EventError):
    pass


def dumps(stream: EventStream) -> bytes:
    rec = np.zeros(len(stream), dtype=RECORD_DTYPE)
    for name in ("t", "x", "y", "p"):
        rec[name] = stream.events[name]
    return HEADER.pack(MAGIC, VERSION, stream.width, stream.height, len(stream)) + rec.tobytes()


def loads(buf: bytes) -> EventStream:
    if len(buf) < HEADER.size:
        raise EventFormatError(f"file too short for a header ({len(buf)} bytes)")
    magic, version, width, height, count = HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise EventFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise EventFormatError(f"unsupported version {version}")
    body = len(buf) - HEADER.size
    if body != count * RECORD_DTYPE.itemsize:
        raise EventFormatError(f"header announces {count} records but {body} payload bytes follow")
    rec = np.frombuffer(buf, dtype=RECORD_DTYPE, count=count, offset=HEADER.size)
    if count and np.any(np.frombuffer(rec["pad"].tobytes(), dtype=np.uint8)):
        raise EventFormatError("non-zero padding bytes")
    ev = np.empty(count, dtype=EVENT_DTYPE)
    for name in ("t", "x", "y", "p"):
        ev[name] = rec[name]
    try:
        return EventStream(width, height, ev)
    except EventError as exc:
        raise EventFormatError(str(exc)) from exc


def write_events(stream: EventStream, path: str | os.PathLike) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(stream))


def read_events(path: str | os.PathLike) -> EventStream:
    with open(path, "rb") as fh:
        return loads(fh.read())
