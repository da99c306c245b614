"""Coefficient-matrix estimation for the low-rank model X = A x_3 E."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .linalg import RankDeficientError, SingularMatrixError, rrqr_select, solve_square, truncated_svd
from .tensor import ShapeError, as_cube, as_matrix, extract_bands, mode3_multiply, unfold3

LARGE_COEFFICIENT = 5.0


class CoefficientWarning(UserWarning):
    """Coefficient matrix has entries large enough to destabilise sampling."""


@dataclass(frozen=True)
class SubspaceEstimate:
    e: np.ndarray
    band_indices: tuple[int, ...]
    v: np.ndarray
    det_vs: float
    max_abs_e: float

    @property
    def rank(self) -> int:
        return len(self.band_indices)


def coefficients_for_bands(v, band_indices: Sequence[int]) -> tuple[np.ndarray, float]:
    """``E = V V_s^{-1}`` for the rows ``band_indices`` of ``v``; also |det(V_s)|."""
    v = as_matrix(v, "v")
    idx = list(band_indices)
    vs = v[idx, :]
    try:
        # E^T = V_s^{-T} V^T
        e = solve_square(vs.T, v.T).T
    except SingularMatrixError as exc:
        raise SingularMatrixError(f"band set {tuple(idx)}: {exc}", exc.condition) from exc
    return np.ascontiguousarray(e), float(abs(np.linalg.det(vs)))


def estimate_coefficients(y, k: int = 3, f: float = 1.05) -> SubspaceEstimate:
    """Estimate E from an observation via rank-k SVD and RRQR band selection."""
    y = as_cube(y, "y")
    bands = y.shape[2]
    if not 1 <= k <= bands:
        raise ValueError(f"rank k={k} must lie in [1, {bands}]")
    svd = truncated_svd(unfold3(y).T, k)
    v = svd.v
    try:
        sel = rrqr_select(v.T, f)
    except RankDeficientError as exc:
        raise RankDeficientError(f"spectral basis of rank {k} is degenerate: {exc}") from exc
    e, det_vs = coefficients_for_bands(v, sel.selected)
    max_abs = float(np.max(np.abs(e)))
    if max_abs > LARGE_COEFFICIENT:
        warnings.warn(
            f"max |E| = {max_abs:.2f} for bands {sel.selected}; restoration may be unstable",
            CoefficientWarning,
            stacklevel=2,
        )
    return SubspaceEstimate(e=e, band_indices=sel.selected, v=v, det_vs=det_vs, max_abs_e=max_abs)


def estimate_coefficients_least_squares(y, band_indices: Sequence[int]) -> np.ndarray:
    """Fit E by least squares against bands of the observation itself.

    Solves ``min_E ||Y - A x_3 E||_F`` with ``A`` the selected bands of ``y``,
    through the K x K normal equations.
    """
    y = as_cube(y, "y")
    a = unfold3(extract_bands(y, band_indices))
    yy = unfold3(y)
    gram = a @ a.T
    try:
        et = solve_square(gram, a @ yy.T)
    except SingularMatrixError as exc:
        raise RankDeficientError(
            f"selected bands {tuple(band_indices)} are linearly dependent: {exc}"
        ) from exc
    return np.ascontiguousarray(et.T)


def reconstruct(a, e, clamp: bool = False) -> np.ndarray:
    """Full cube ``A x_3 E``; optionally clipped to [0, 1]."""
    a = as_cube(a, "a")
    e = as_matrix(e, "e")
    if e.shape[1] != a.shape[2]:
        raise ShapeError(f"coefficient matrix {e.shape} does not match {a.shape[2]} reduced bands")
    x = mode3_multiply(a, e)
    if clamp:
        np.clip(x, 0.0, 1.0, out=x)
    return x


def equal_interval_indices(bands: int, k: int, start: int = 0, spacing: int | None = None) -> tuple[int, ...]:
    """``k`` bands ``start, start + d, ...``; ``d`` defaults to ``bands // (k + 1)``."""
    d = bands // (k + 1) if spacing is None else spacing
    if d < 1 or start < 0 or start + (k - 1) * d >= bands:
        raise ValueError(f"cannot space {k} bands by {d} from {start} within {bands}")
    return tuple(start + i * d for i in range(k))


def naive_band_sets(bands: int, k: int = 3) -> list[tuple[int, ...]]:
    """Equal-interval selections at three offsets (0, 3/4 and 3/2 of the spacing).

    With 191 bands and k = 3 this gives (0, 47, 94), (35, 82, 129) and
    (70, 117, 164), the kind of hand-picked sets RRQR is compared against.
    """
    d = bands // (k + 1)
    starts = sorted({0, round(0.75 * d), round(1.5 * d)})
    return [equal_interval_indices(bands, k, s, d) for s in starts if s + (k - 1) * d < bands]
