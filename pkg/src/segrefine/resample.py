"""Separable bilinear resampling between patch grids and pixel rasters.

Coordinates use corner alignment: output index i maps to i*(S-1)/(D-1) in
the source, so the first/last samples coincide and resampling to the same
size is the identity. A target axis of size 1 samples the source center.
"""

from __future__ import annotations

import numpy as np


def _axis_coords(src: int, dst: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if dst == 1:
        pos = np.array([(src - 1) / 2.0])
    else:
        pos = np.arange(dst, dtype=np.float64) * (src - 1) / (dst - 1)
    lo = np.floor(pos).astype(np.int64)
    lo = np.clip(lo, 0, max(src - 2, 0))
    frac = pos - lo
    if src == 1:
        frac = np.zeros_like(frac)
    return lo, lo + 1 if src > 1 else lo, frac


def resize_axis(values: np.ndarray, axis: int, new_size: int) -> np.ndarray:
    """Linear interpolation of one axis to `new_size` samples."""
    src = values.shape[axis]
    if src == new_size:
        return values
    lo, hi, frac = _axis_coords(src, new_size)
    lower = np.take(values, lo, axis=axis)
    upper = np.take(values, np.minimum(hi, src - 1), axis=axis)
    shape = [1] * values.ndim
    shape[axis] = new_size
    w = frac.reshape(shape)
    return lower * (1.0 - w) + upper * w


def resize_plane(values: np.ndarray, new_rc: tuple[int, int]) -> np.ndarray:
    """Bilinear resize of the two leading axes; trailing axes ride along."""
    out = resize_axis(values, 0, new_rc[0])
    return resize_axis(out, 1, new_rc[1])


def resize_grid_scores(scores: np.ndarray, grid: tuple[int, int],
                       new_grid: tuple[int, int]) -> np.ndarray:
    """Resample flattened per-patch rows (P x K) from one grid to another."""
    r, c = grid
    plane = scores.reshape(r, c, -1)
    out = resize_plane(plane, new_grid)
    return out.reshape(new_grid[0] * new_grid[1], scores.shape[1])
