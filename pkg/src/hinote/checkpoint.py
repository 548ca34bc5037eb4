"""FSRCKPT1 checkpoint files.

Layout: the 8-byte magic ``FSRCKPT1`` followed by one entry per named array::

    u32 name_len | name (utf-8) | u32 rank | u32 extents[rank] | f32 data (LE)

Entries run to end of file.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"FSRCKPT1"


class CheckpointError(ValueError):
    pass


def dump_bytes(arrays: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC]
    for name, arr in arrays.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def save(path, arrays: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(dump_bytes(arrays))


def parse_bytes(buf: bytes) -> dict[str, np.ndarray]:
    if buf[:8] != MAGIC:
        raise CheckpointError("not an FSRCKPT1 file")
    out: dict[str, np.ndarray] = {}
    pos = 8

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise CheckpointError(f"truncated checkpoint at byte offset {pos}")
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    while pos < len(buf):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        count = int(np.prod(shape)) if rank else 1
        data = np.frombuffer(take(4 * count), dtype="<f4").astype(np.float32)
        out[name] = data.reshape(shape)
    return out


def load(path) -> dict[str, np.ndarray]:
    return parse_bytes(Path(path).read_bytes())
