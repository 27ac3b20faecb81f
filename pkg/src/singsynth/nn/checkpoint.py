"""Named-parameter checkpoint files.

Layout (little-endian): magic ``WSCKPT1``, uint32 metadata length, UTF-8 JSON
metadata, uint32 tensor count, then per tensor: uint16 name length, name,
uint8 rank, uint32 dims, float32 values.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..exceptions import FormatError

MAGIC = b"WSCKPT1"


def save_checkpoint(path, tensors: dict[str, np.ndarray], metadata: dict | None = None) -> None:
    meta = json.dumps(metadata or {}, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", len(meta)), meta, struct.pack("<I", len(tensors))]
    for name, value in tensors.items():
        value = np.asarray(value, dtype="<f4")
        enc = name.encode("utf-8")
        parts.append(struct.pack("<H", len(enc)) + enc)
        parts.append(struct.pack(f"<B{value.ndim}I", value.ndim, *value.shape))
        parts.append(value.tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if data[:7] != MAGIC:
        raise FormatError(f"{path}: not a checkpoint (bad magic)")
    try:
        off = 7
        (meta_len,) = struct.unpack_from("<I", data, off)
        off += 4
        meta = json.loads(data[off:off + meta_len].decode("utf-8"))
        off += meta_len
        (count,) = struct.unpack_from("<I", data, off)
        off += 4
        tensors = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<H", data, off)
            off += 2
            name = data[off:off + n].decode("utf-8")
            off += n
            (rank,) = struct.unpack_from("<B", data, off)
            off += 1
            shape = struct.unpack_from(f"<{rank}I", data, off)
            off += 4 * rank
            size = int(np.prod(shape)) if rank else 1
            arr = np.frombuffer(data, dtype="<f4", count=size, offset=off).reshape(shape)
            off += 4 * size
            tensors[name] = arr.astype(np.float64)
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: corrupt checkpoint ({exc})") from None
    if off != len(data):
        raise FormatError(f"{path}: trailing bytes in checkpoint")
    return meta, tensors
