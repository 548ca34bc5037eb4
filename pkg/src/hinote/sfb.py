"""SFB dataset files.

Header (32 bytes, little endian): magic ``SFB1``, u32 record count, u32
channels, u32 n_y, u32 n_x, u32 dtype code, 8 reserved bytes.  Records follow
as raw planar floats, ``(channels, n_y, n_x)`` each.
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from .fields import GridField

MAGIC = b"SFB1"
_HEADER = struct.Struct("<4s5I8s")
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class SFBError(ValueError):
    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)


def dump_bytes(fields: Sequence, dtype_code: int = 0) -> bytes:
    arrays = [np.asarray(f.values if isinstance(f, GridField) else f) for f in fields]
    arrays = [a[None] if a.ndim == 2 else a for a in arrays]
    if not arrays:
        raise ValueError("cannot write an empty SFB file")
    shape = arrays[0].shape
    for a in arrays:
        if a.shape != shape:
            raise ValueError(f"all records must share a shape; got {a.shape} and {shape}")
    dt = DTYPES[dtype_code]
    header = _HEADER.pack(MAGIC, len(arrays), *shape, dtype_code, b"\0" * 8)
    return header + b"".join(np.ascontiguousarray(a, dtype=dt).tobytes() for a in arrays)


def write_sfb(path, fields: Sequence, dtype_code: int = 0) -> None:
    Path(path).write_bytes(dump_bytes(fields, dtype_code))


def parse_bytes(buf: bytes) -> list[GridField]:
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise SFBError("not an SFB file", 0)
    if len(buf) < _HEADER.size:
        raise SFBError("truncated SFB header", len(buf))
    _, count, c, ny, nx, code, _ = _HEADER.unpack_from(buf)
    if code not in DTYPES:
        raise SFBError(f"unknown dtype code {code}", 20)
    dt = DTYPES[code]
    rec_bytes = c * ny * nx * dt.itemsize
    out = []
    pos = _HEADER.size
    for i in range(count):
        if pos + rec_bytes > len(buf):
            raise SFBError(f"truncated record {i} of {count}", len(buf))
        arr = np.frombuffer(buf, dtype=dt, count=c * ny * nx, offset=pos)
        out.append(GridField(arr.astype(dt.newbyteorder("=")).reshape(c, ny, nx)))
        pos += rec_bytes
    return out


def read_sfb(path) -> list[GridField]:
    return parse_bytes(Path(path).read_bytes())
