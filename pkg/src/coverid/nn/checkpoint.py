"""Binary checkpoint format "CKPT1".

Layout (little-endian):

    magic   4 bytes  b"CKPT"
    version u32      = 1
    count   u32      number of named arrays
    entries, each:
        name_len u32
        name     utf-8 bytes
        rank     u32
        dims     rank * u32
        data     prod(dims) * f32, row-major

Round-trips are bit-exact: arrays are stored and restored as float32
without any transformation.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import DecodeError

MAGIC = b"CKPT"
VERSION = 1


def write_checkpoint(path: str | Path, arrays: dict[str, np.ndarray]) -> None:
    """Atomically write named float32 arrays (write temp, then rename)."""
    path = Path(path)
    parts = [MAGIC, struct.pack("<II", VERSION, len(arrays))]
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype=np.float32)
        nb = name.encode("utf-8")
        parts.append(struct.pack("<I", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(b"".join(parts))
    tmp.replace(path)


def read_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise DecodeError(f"{path}: bad checkpoint magic {buf[:4]!r}")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise DecodeError(f"{path}: unsupported checkpoint version {version}")
    off = 12
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", buf, off)
        off += 4
        name = buf[off : off + name_len].decode("utf-8")
        off += name_len
        (rank,) = struct.unpack_from("<I", buf, off)
        off += 4
        dims = struct.unpack_from(f"<{rank}I", buf, off)
        off += 4 * rank
        n = int(np.prod(dims)) if rank else 1
        data = np.frombuffer(buf, dtype="<f4", count=n, offset=off).reshape(dims)
        off += 4 * n
        out[name] = data.copy()
    if off != len(buf):
        raise DecodeError(f"{path}: {len(buf) - off} trailing bytes")
    return out
