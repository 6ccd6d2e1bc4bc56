"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"SMBK"  u32 version
    repeated until EOF:
        u32 name_len, name (utf-8), u8 dtype_tag, u32 rank, u64 * rank extents,
        payload (row-major, little-endian)

dtype tags: 0 = float32, 1 = float64, 2 = int64.
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"SMBK"
VERSION = 1
_TAGS = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_TAG_OF = {np.dtype(v).newbyteorder("="): k for k, v in _TAGS.items()}


class CheckpointError(ValueError):
    pass


def _tag(arr: np.ndarray) -> int:
    try:
        return _TAG_OF[arr.dtype.newbyteorder("=")]
    except KeyError:
        raise CheckpointError(f"unsupported dtype {arr.dtype}") from None


def dumps(arrays: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        tag = _tag(arr)
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<BI", tag, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_TAGS[tag]).tobytes())
    return b"".join(parts)


def loads(buf: bytes) -> dict[str, np.ndarray]:
    if buf[:4] != MAGIC:
        raise CheckpointError("bad magic bytes, not a checkpoint")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 8
    out: dict[str, np.ndarray] = {}
    try:
        while pos < len(buf):
            (n,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            name = buf[pos : pos + n].decode("utf-8")
            pos += n
            tag, rank = struct.unpack_from("<BI", buf, pos)
            pos += 5
            shape = struct.unpack_from(f"<{rank}Q", buf, pos)
            pos += 8 * rank
            dt = _TAGS[tag]
            nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
            if pos + nbytes > len(buf):
                raise CheckpointError(f"truncated payload for {name!r} at byte {pos}")
            out[name] = np.frombuffer(buf, dtype=dt, count=nbytes // dt.itemsize, offset=pos).reshape(shape).copy()
            pos += nbytes
    except (struct.error, KeyError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint near byte {pos}: {exc}") from None
    return out


def save(path, arrays: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(arrays))


def load(path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())
