"""Flat binary container for named float64 arrays.

Layout (all integers little-endian):

    magic        8 bytes  b"FVCTNSR1"
    version      u32      currently 1
    meta_len     u32      length of a UTF-8 JSON metadata block (0 = none)
    meta         bytes    JSON object (model config, fold id, ...)
    count        u32      number of named arrays
    per array:
        name_len u32
        name     UTF-8 bytes
        rank     u32
        dims     rank x u64
        payload  prod(dims) x f64, little-endian, row-major

Array order is preserved, so writing the same arrays twice yields identical
bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

__all__ = ["MAGIC", "FORMAT_VERSION", "save_arrays", "load_arrays"]

MAGIC = b"FVCTNSR1"
FORMAT_VERSION = 1


def save_arrays(path, arrays: dict[str, np.ndarray], meta: dict | None = None):
    """Write named arrays (insertion order preserved) plus optional metadata."""
    chunks = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    meta_bytes = b"" if meta is None else json.dumps(meta, sort_keys=True).encode()
    chunks.append(struct.pack("<I", len(meta_bytes)))
    chunks.append(meta_bytes)
    chunks.append(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr, dtype=np.float64)
        name_b = name.encode()
        chunks.append(struct.pack("<I", len(name_b)))
        chunks.append(name_b)
        chunks.append(struct.pack("<I", a.ndim))
        chunks.append(struct.pack(f"<{a.ndim}Q", *a.shape) if a.ndim else b"")
        chunks.append(a.astype("<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise ValueError("truncated checkpoint file")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_arrays(path) -> tuple[dict[str, np.ndarray], dict | None]:
    """Read back (arrays, meta) from a file written by :func:`save_arrays`."""
    r = _Reader(Path(path).read_bytes())
    if r.take(len(MAGIC)) != MAGIC:
        raise ValueError(f"{path}: not a tensor checkpoint (bad magic)")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format version {version}")
    meta_len = r.u32()
    meta = json.loads(r.take(meta_len).decode()) if meta_len else None
    arrays: dict[str, np.ndarray] = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode()
        rank = r.u32()
        dims = struct.unpack(f"<{rank}Q", r.take(8 * rank)) if rank else ()
        n = int(np.prod(dims)) if rank else 1
        payload = np.frombuffer(r.take(8 * n), dtype="<f8")
        arrays[name] = payload.reshape(dims).astype(np.float64)
    if r.pos != len(r.buf):
        raise ValueError(f"{path}: trailing bytes after array section")
    return arrays, meta
