"""Minimal portable graymap (P5) writer for sample-grid snapshots."""

from __future__ import annotations

import numpy as np

__all__ = ["write_pgm", "tile_images"]


def write_pgm(path, image):
    """Write a 2D array of values in [0, 1] as a binary 8-bit PGM."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"PGM output needs a 2D array, got shape {arr.shape}")
    pixels = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii"))
        f.write(pixels.tobytes())


def tile_images(images, columns=8):
    """Tile (N, H, W) or (N, H, W, 1) images into one 2D grid array."""
    arr = np.asarray(images)
    if arr.ndim == 4 and arr.shape[-1] == 1:
        arr = arr[..., 0]
    n, h, w = arr.shape
    rows = (n + columns - 1) // columns
    grid = np.zeros((rows * h, columns * w), dtype=arr.dtype)
    for i in range(n):
        r, c = divmod(i, columns)
        grid[r * h : (r + 1) * h, c * w : (c + 1) * w] = arr[i]
    return grid
