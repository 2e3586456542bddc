"""Named-tensor checkpoint container.

Layout (little-endian)::

    b"DCPT" | u32 version | u32 count
    count x ( u16 name_len | name (utf-8) | u8 rank | rank x u32 dim | f64 values, row-major )
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"DCPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps_params(params: dict) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(params))]
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def loads_params(data: bytes) -> dict:
    if data[:4] != MAGIC:
        raise CheckpointError("bad magic")
    try:
        version, count = struct.unpack_from("<II", data, 4)
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        pos = 12
        out = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<B", data, pos)
            pos += 1
            shape = struct.unpack_from(f"<{rank}I", data, pos)
            pos += 4 * rank
            size = int(np.prod(shape, dtype=np.int64))
            if pos + 8 * size > len(data):
                raise CheckpointError(f"truncated tensor {name!r}")
            out[name] = np.frombuffer(data, dtype="<f8", count=size, offset=pos) \
                .reshape(shape).astype(np.float64)
            pos += 8 * size
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from None
    if pos != len(data):
        raise CheckpointError("trailing bytes after last tensor")
    return out


def save_params(params: dict, path) -> None:
    Path(path).write_bytes(dumps_params(params))


def load_params(path) -> dict:
    return loads_params(Path(path).read_bytes())
