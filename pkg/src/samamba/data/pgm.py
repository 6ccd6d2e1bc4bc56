"""Binary PGM (P5) reading and writing.

Header written: ``P5\\n<width> <height>\\n<maxval>\\n`` followed by the raster
row by row.  maxval 255 gives one byte per pixel; the reader also accepts
16-bit big-endian rasters (maxval > 255) and ``#`` comment lines.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np


class PGMError(ValueError):
    """Malformed or truncated PGM data."""


def quantize(values: np.ndarray) -> np.ndarray:
    """Map [0, 1] floats to 8-bit levels (round half to even, clipped)."""
    return np.clip(np.rint(np.asarray(values, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def to_unit(raw: np.ndarray, maxval: int = 255) -> np.ndarray:
    return raw.astype(np.float32) / np.float32(maxval)


def encode(raw: np.ndarray, maxval: int = 255) -> bytes:
    raw = np.asarray(raw)
    if raw.ndim != 2:
        raise PGMError(f"PGM holds a single 2-D plane, got shape {raw.shape}")
    h, w = raw.shape
    header = f"P5\n{w} {h}\n{maxval}\n".encode("ascii")
    if maxval < 256:
        body = np.ascontiguousarray(raw, dtype=np.uint8).tobytes()
    else:
        body = np.ascontiguousarray(raw, dtype=">u2").tobytes()
    return header + body


def decode(buf: bytes) -> np.ndarray:
    pos = 0

    def token() -> tuple[bytes, int]:
        nonlocal pos
        n = len(buf)
        while pos < n:
            c = buf[pos : pos + 1]
            if c == b"#":
                while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            elif c.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < n and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise PGMError(f"unexpected end of header at byte {start}")
        return buf[start:pos], start

    magic, off = token()
    if magic != b"P5":
        raise PGMError(f"bad magic {magic!r} at byte {off}, expected b'P5'")
    fields = []
    for label in ("width", "height", "maxval"):
        tok, off = token()
        if not tok.isdigit():
            raise PGMError(f"invalid {label} {tok!r} at byte {off}")
        fields.append(int(tok))
    w, h, maxval = fields
    if not 0 < maxval < 65536:
        raise PGMError(f"maxval {maxval} out of range at byte {off}")
    if pos >= len(buf) or not buf[pos : pos + 1].isspace():
        raise PGMError(f"missing whitespace after header at byte {pos}")
    pos += 1
    dtype = np.dtype(np.uint8) if maxval < 256 else np.dtype(">u2")
    need = w * h * dtype.itemsize
    if len(buf) - pos < need:
        raise PGMError(f"truncated raster: need {need} bytes from byte {pos}, have {len(buf) - pos}")
    raw = np.frombuffer(buf, dtype=dtype, count=w * h, offset=pos).reshape(h, w)
    return raw.astype(np.uint8 if maxval < 256 else np.uint16)


def save_pgm(path, values: np.ndarray, kind: str = "image") -> np.ndarray:
    """Write ``values`` and return the stored 8-bit raster.

    ``kind="image"`` quantises [0, 1] floats to 0..255; ``kind="mask"`` writes
    nonzero pixels as 255.
    """
    values = np.asarray(values)
    if kind == "mask":
        raw = np.where(values != 0, 255, 0).astype(np.uint8)
    elif kind == "image":
        raw = values if values.dtype == np.uint8 else quantize(values)
    else:
        raise ValueError(f"unknown kind {kind!r}")
    Path(path).write_bytes(encode(raw))
    return raw


def load_pgm(path) -> np.ndarray:
    """Raw raster (uint8, or uint16 for 16-bit files)."""
    return decode(Path(path).read_bytes())


def load_image(path) -> np.ndarray:
    return to_unit(load_pgm(path))


def load_mask(path) -> np.ndarray:
    return (load_pgm(path) > 0).astype(np.uint8)
