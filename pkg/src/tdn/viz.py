"""Grayscale export of adjacency matrices as binary PGM (P5)."""
from __future__ import annotations

from pathlib import Path

import numpy as np


def adjacency_to_gray(a: np.ndarray) -> np.ndarray:
    """Scale to 0..255 by the max entry (half-up rounding); all-zero maps to black."""
    a = np.asarray(a, dtype=np.float64)
    top = a.max()
    if top <= 0:
        return np.zeros(a.shape, dtype=np.uint8)
    return np.floor(255.0 * np.clip(a, 0.0, None) / top + 0.5).astype(np.uint8)


def encode_pgm(pixels: np.ndarray) -> bytes:
    h, w = pixels.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(pixels, dtype=np.uint8).tobytes()


def write_pgm(a: np.ndarray, path) -> None:
    Path(path).write_bytes(encode_pgm(adjacency_to_gray(a)))
