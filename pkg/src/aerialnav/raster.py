"""16-bit grayscale PGM (P5) encoding for depth frames in millimeters."""
from __future__ import annotations

import re

import numpy as np

_HEADER = re.compile(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s")


def encode_pgm16(mm: np.ndarray) -> bytes:
    mm = np.asarray(mm, dtype=np.uint16)
    height, width = mm.shape
    # PGM stores 16-bit samples most significant byte first
    return b"P5\n%d %d\n65535\n" % (width, height) + mm.astype(">u2").tobytes()


def decode_pgm16(data: bytes) -> np.ndarray:
    match = _HEADER.match(data)
    if match is None:
        raise ValueError("not a binary PGM")
    width, height, maxval = (int(g) for g in match.groups())
    if maxval != 65535:
        raise ValueError(f"expected 16-bit PGM, got maxval {maxval}")
    body = data[match.end():]
    if len(body) != 2 * width * height:
        raise ValueError("PGM payload size mismatch")
    return np.frombuffer(body, dtype=">u2").reshape(height, width).astype(np.uint16)
