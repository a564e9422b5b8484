"""Minimal 8-bit PGM (P5 write, P2/P5 read)."""
from __future__ import annotations

from pathlib import Path

import numpy as np

__all__ = ["encode_pgm", "quantize", "read_pgm", "write_pgm"]


def quantize(unit):
    """Map values in ``[0, 1]`` to bytes with round-half-up."""
    unit = np.clip(np.asarray(unit, dtype=np.float64), 0.0, 1.0)
    return np.floor(unit * 255.0 + 0.5).astype(np.uint8)


def encode_pgm(pixels):
    pixels = np.asarray(pixels, dtype=np.uint8)
    if pixels.ndim != 2:
        raise ValueError(f"PGM needs a 2-D array, got shape {pixels.shape}")
    h, w = pixels.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes()


def write_pgm(path, pixels):
    data = encode_pgm(pixels)
    Path(path).write_bytes(data)
    return data


def _tokens(data):
    pos = 0
    while True:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        yield data[start:pos], pos


def read_pgm(path):
    data = Path(path).read_bytes()
    tokens = _tokens(data)
    magic, _ = next(tokens)
    width, _ = next(tokens)
    height, _ = next(tokens)
    maxval, end = next(tokens)
    w, h, maxval = int(width), int(height), int(maxval)
    if magic == b"P5":
        if maxval > 255:
            raise ValueError("16-bit PGM is not supported")
        raw = data[end + 1:end + 1 + w * h]
        if len(raw) != w * h:
            raise ValueError("truncated PGM")
        return np.frombuffer(raw, dtype=np.uint8).reshape(h, w).copy()
    if magic == b"P2":
        values = [int(next(tokens)[0]) for _ in range(w * h)]
        return np.array(values, dtype=np.int64).reshape(h, w)
    raise ValueError(f"not a PGM file (magic {magic!r})")
