"""PSNR and SSIM for unit-range cubes, computed per band and averaged."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, as_cube

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_STD = 1.5
K1, K2 = 0.01, 0.03


@dataclass(frozen=True)
class ScorePair:
    psnr: float
    ssim: float


def _pair(x, y):
    x = as_cube(x, "x")
    y = as_cube(y, "y")
    if x.shape != y.shape:
        raise ShapeError(f"shape mismatch {x.shape} vs {y.shape}")
    return x, y


def psnr(x, y) -> float:
    """Mean over bands of ``10 log10(1 / MSE_b)``; identical bands score 100 dB."""
    x, y = _pair(x, y)
    mse = np.mean((x - y) ** 2, axis=(0, 1))
    per_band = np.where(mse > 0, 10.0 * np.log10(1.0 / np.maximum(mse, 1e-300)), PSNR_CAP)
    return float(np.mean(np.minimum(per_band, PSNR_CAP)))


def _window() -> np.ndarray:
    r = np.arange(SSIM_WINDOW) - SSIM_WINDOW // 2
    g = np.exp(-(r**2) / (2 * SSIM_STD**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    # separable 'valid' correlation over the two spatial axes
    n = g.size
    h, w = img.shape[:2]
    rows = sum(g[i] * img[i : h - n + 1 + i] for i in range(n))
    return sum(g[j] * rows[:, j : w - n + 1 + j] for j in range(n))


def ssim(x, y, data_range: float = 1.0) -> float:
    """Gaussian-window SSIM (11x11, std 1.5) over valid windows, averaged over bands."""
    x, y = _pair(x, y)
    if min(x.shape[:2]) < SSIM_WINDOW:
        raise ShapeError(f"image {x.shape[:2]} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    g = _window()
    c1 = (K1 * data_range) ** 2
    c2 = (K2 * data_range) ** 2
    mx = _filter_valid(x, g)
    my = _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mx * mx
    syy = _filter_valid(y * y, g) - my * my
    sxy = _filter_valid(x * y, g) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(np.mean(num / den, axis=(0, 1))))


def score(x, y) -> ScorePair:
    return ScorePair(psnr=psnr(x, y), ssim=ssim(x, y))


METRIC_FIELDS = ("dataset", "task", "parameters", "psnr", "ssim", "wall_time")


def metrics_csv_row(dataset: str, task: str, parameters: str, scores: ScorePair, wall_time: float, header: bool = False) -> str:
    """One CSV record (optionally preceded by the header line)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if header:
        writer.writerow(METRIC_FIELDS)
    writer.writerow([dataset, task, parameters, f"{scores.psnr:.4f}", f"{scores.ssim:.6f}", f"{wall_time:.3f}"])
    return buf.getvalue()
