"""Dense H x W x B cubes and the mode-3 algebra.

Cubes are plain ``float64`` numpy arrays of shape ``(H, W, B)``; matrices are
2-D ``float64`` arrays. The mode-3 unfolding of a cube is the ``(B, H*W)``
matrix whose row ``b`` is band ``b`` scanned row-major, which for a
C-contiguous cube is a transposed reshape and therefore a view.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when array dimensions do not line up."""


def as_cube(x, name: str = "cube") -> np.ndarray:
    """Validate and convert ``x`` to a C-contiguous float64 cube."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 3:
        raise ShapeError(f"{name} must be 3-D (H, W, B), got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise ShapeError(f"{name} has an empty dimension: {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite samples")
    return arr


def as_matrix(m, name: str = "matrix") -> np.ndarray:
    arr = np.ascontiguousarray(m, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def mode3_multiply(x, e) -> np.ndarray:
    """Contract the band axis of ``x`` (H, W, C) against ``e`` (B, C).

    ``out[m, n, b] = sum_i x[m, n, i] * e[b, i]``.
    """
    x = as_cube(x, "x")
    e = as_matrix(e, "e")
    if e.shape[1] != x.shape[2]:
        raise ShapeError(
            f"mode-3 product needs e.cols == x.bands, got {e.shape[1]} vs {x.shape[2]}"
        )
    h, w, c = x.shape
    out = x.reshape(h * w, c) @ e.T
    return out.reshape(h, w, e.shape[0])


def unfold3(x) -> np.ndarray:
    """Mode-3 unfolding, shape (B, H*W)."""
    x = as_cube(x, "x")
    h, w, b = x.shape
    return x.reshape(h * w, b).T


def fold3(m, h: int, w: int) -> np.ndarray:
    """Inverse of :func:`unfold3`."""
    m = as_matrix(m, "m")
    if m.shape[1] != h * w:
        raise ShapeError(f"cannot fold {m.shape} into {h}x{w} planes")
    return np.ascontiguousarray(m.T).reshape(h, w, m.shape[0])


def frobenius_norm(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.sqrt(np.sum(x * x)))


def extract_bands(x, indices: Sequence[int]) -> np.ndarray:
    """Return the bands ``indices`` of ``x`` in the given order."""
    x = as_cube(x, "x")
    idx = [int(i) for i in indices]
    if len(set(idx)) != len(idx):
        raise ValueError(f"duplicate band index in {idx}")
    nb = x.shape[2]
    bad = [i for i in idx if i < 0 or i >= nb]
    if bad:
        raise IndexError(f"band indices {bad} out of range for {nb} bands")
    return np.ascontiguousarray(x[:, :, idx])


def selection_matrix(indices: Sequence[int], bands: int) -> np.ndarray:
    """K x B matrix whose mode-3 product picks ``indices``."""
    s = np.zeros((len(indices), bands))
    s[np.arange(len(indices)), list(indices)] = 1.0
    return s
