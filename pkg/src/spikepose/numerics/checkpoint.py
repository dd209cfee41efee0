"""SNNC checkpoint files.

Layout (all integers little-endian)::

    b"SNNC" | version u32 | tensor count u32 |
    per tensor: name length u16, UTF-8 name, ndim u8, dims u32 each,
                dtype u8 (0 = real32, 1 = binary as u8), raw payload
"""

from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"SNNC"
VERSION = 1
DTYPE_REAL32 = 0
DTYPE_BINARY = 1


class CheckpointFormatError(ValueError):
    pass


def _encode(name: str, arr: np.ndarray) -> bytes:
    raw_name = name.encode("utf-8")
    if len(raw_name) > 0xFFFF:
        raise CheckpointFormatError(f"tensor name too long: {name[:40]}...")
    arr = np.asarray(arr)
    if arr.dtype == np.uint8 or arr.dtype == np.bool_:
        if not np.all((arr == 0) | (arr == 1)):
            raise CheckpointFormatError(f"binary tensor {name!r} holds values outside {{0, 1}}")
        code, payload = DTYPE_BINARY, arr.astype("<u1").tobytes()
    else:
        code, payload = DTYPE_REAL32, arr.astype("<f4").tobytes()
    head = struct.pack("<H", len(raw_name)) + raw_name + struct.pack("<B", arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape) + struct.pack("<B", code)
    return head + payload


def dumps(tensors: Mapping[str, np.ndarray]) -> bytes:
    out = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    out.extend(_encode(name, arr) for name, arr in tensors.items())
    return b"".join(out)


def loads(blob: bytes) -> dict[str, np.ndarray]:
    buf = io.BytesIO(blob)

    def take(n: int) -> bytes:
        chunk = buf.read(n)
        if len(chunk) != n:
            raise CheckpointFormatError("truncated checkpoint")
        return chunk

    if take(4) != MAGIC:
        raise CheckpointFormatError("bad checkpoint magic")
    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{ndim}I", take(4 * ndim))
        (code,) = struct.unpack("<B", take(1))
        n = int(np.prod(dims)) if ndim else 1
        if code == DTYPE_REAL32:
            arr = np.frombuffer(take(4 * n), dtype="<f4").astype(np.float32)
        elif code == DTYPE_BINARY:
            arr = np.frombuffer(take(n), dtype="<u1").astype(np.uint8)
            if not np.all(arr <= 1):
                raise CheckpointFormatError(f"binary tensor {name!r} holds values outside {{0, 1}}")
        else:
            raise CheckpointFormatError(f"unknown dtype code {code} for {name!r}")
        if name in tensors:
            raise CheckpointFormatError(f"duplicate tensor name {name!r}")
        tensors[name] = arr.reshape(dims)
    if buf.read(1):
        raise CheckpointFormatError("trailing bytes after last tensor")
    return tensors


def write_checkpoint(path, tensors: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(tensors))


def read_checkpoint(path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())
