"""Synthetic exactly-low-rank hyperspectral cubes.

The spectra share a smooth common profile and differ from one another only
inside a few narrow absorption windows, which mimics the strong inter-band
correlation of real scenes: most bands are nearly proportional across
materials, so a careless band choice gives an ill-conditioned basis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import seeding
from .degradation import gaussian_blur
from .tensor import mode3_multiply


@dataclass(frozen=True)
class SyntheticScene:
    x: np.ndarray
    a: np.ndarray
    e: np.ndarray


def smooth_field(h: int, w: int, k: int, rng: np.random.Generator, terms: int = 6) -> np.ndarray:
    """Sum of random low-frequency planar waves per channel, rescaled to [0.1, 1]."""
    yy, xx = np.meshgrid(np.arange(h) / h, np.arange(w) / w, indexing="ij")
    out = np.empty((h, w, k))
    for c in range(k):
        f = np.zeros((h, w))
        for _ in range(terms):
            fy, fx = rng.uniform(-3.0, 3.0, size=2)
            phase = rng.uniform(0, 2 * np.pi)
            f += rng.uniform(0.3, 1.0) * np.cos(2 * np.pi * (fy * yy + fx * xx) + phase)
        # a few sharp-edged regions so TV has something to preserve
        cy, cx = rng.uniform(0.2, 0.8, size=2)
        r = rng.uniform(0.1, 0.3)
        f += 1.5 * ((yy - cy) ** 2 + (xx - cx) ** 2 < r * r)
        f = (f - f.min()) / (f.max() - f.min())
        out[:, :, c] = 0.1 + 0.9 * f
    return out


def spectra(bands: int, k: int, rng: np.random.Generator, contrast: float = 0.6) -> np.ndarray:
    """B x K non-negative signatures: shared profile times localized features."""
    b = np.arange(bands, dtype=np.float64)
    base = np.ones(bands)
    for _ in range(3):
        centre = rng.uniform(0, bands)
        width = rng.uniform(0.3, 0.8) * bands
        base += rng.uniform(0.2, 0.6) * np.exp(-0.5 * ((b - centre) / width) ** 2)
    width = max(1.0, bands / 16)
    centres = (np.arange(k) + rng.uniform(0.25, 0.75, size=k)) * bands / k
    e = np.empty((bands, k))
    for j in range(k):
        bump = np.exp(-0.5 * ((b - centres[j]) / width) ** 2)
        e[:, j] = base * (1.0 + contrast * bump)
    return e


def make_scene(h: int, w: int, bands: int, k: int = 3, seed: int = 0) -> SyntheticScene:
    """Clean cube ``X = A x_3 E`` of mode-3 rank exactly ``k``, samples in (0, 0.95]."""
    if not 1 <= k <= bands:
        raise ValueError(f"rank {k} must lie in [1, {bands}]")
    if h < 1 or w < 1:
        raise ValueError("spatial dimensions must be positive")
    rng = seeding.rng(seed, seeding.SYNTH_STREAM)
    a = smooth_field(h, w, k, rng)
    if min(h, w) >= 8:
        a = gaussian_blur(a, 0.7)
    e = spectra(bands, k, rng)
    e = e * (0.95 / mode3_multiply(a, e).max())
    return SyntheticScene(x=mode3_multiply(a, e), a=a, e=e)
