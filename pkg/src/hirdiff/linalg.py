"""Truncated SVD and rank-revealing QR band selection."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import qr, solve_triangular

from .tensor import ShapeError, as_matrix


class RankDeficientError(np.linalg.LinAlgError):
    """Input matrix does not have the rank the operation needs."""


class SingularMatrixError(np.linalg.LinAlgError):
    """Square system too close to singular to solve reliably."""

    def __init__(self, message: str, condition: float):
        super().__init__(message)
        self.condition = condition


@dataclass(frozen=True)
class ThinSvd:
    u: np.ndarray
    s: np.ndarray
    v: np.ndarray

    @property
    def rank(self) -> int:
        return self.s.shape[0]

    def approximation(self) -> np.ndarray:
        return (self.u * self.s) @ self.v.T


@dataclass(frozen=True)
class RrqrResult:
    selected: tuple[int, ...]
    det_abs: float
    interchange_count: int
    # |det(R11)| before any interchange, then after each one.
    det_history: tuple[float, ...] = field(default=())


def truncated_svd(m, k: int) -> ThinSvd:
    """Rank-``k`` SVD of ``m``.

    Columns are sign-fixed so that the largest-magnitude entry of every right
    singular vector is positive; the left vectors are flipped to match.
    """
    m = as_matrix(m, "m")
    if not 1 <= k <= min(m.shape):
        raise ValueError(f"rank {k} outside [1, {min(m.shape)}] for shape {m.shape}")
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    u = u[:, :k]
    s = s[:k]
    v = vt[:k].T
    pivot = np.argmax(np.abs(v), axis=0)
    signs = np.sign(v[pivot, np.arange(k)])
    signs[signs == 0] = 1.0
    return ThinSvd(u=np.ascontiguousarray(u * signs), s=s.copy(), v=np.ascontiguousarray(v * signs))


def det_abs(m) -> float:
    m = as_matrix(m, "m")
    if m.shape[0] != m.shape[1]:
        raise ShapeError(f"determinant needs a square matrix, got {m.shape}")
    sign, logdet = np.linalg.slogdet(m)
    if sign == 0:
        return 0.0
    return float(np.exp(logdet))


def solve_square(a, b) -> np.ndarray:
    """Solve ``a @ x = b``, refusing systems below the conditioning floor.

    The floor is ``|det(a)| < 1e-12 * prod(row norms of a)``.
    """
    a = as_matrix(a, "a")
    b = np.asarray(b, dtype=np.float64)
    if a.shape[0] != a.shape[1]:
        raise ShapeError(f"solve_square needs a square matrix, got {a.shape}")
    if b.shape[0] != a.shape[0]:
        raise ShapeError(f"right-hand side has {b.shape[0]} rows, expected {a.shape[0]}")
    row_norms = np.linalg.norm(a, axis=1)
    scale = float(np.prod(row_norms))
    d = det_abs(a)
    if scale == 0.0 or d < 1e-12 * scale:
        cond = float(np.linalg.cond(a)) if scale > 0 else float("inf")
        raise SingularMatrixError(
            f"matrix is numerically singular (|det|={d:.3e}, condition~{cond:.3e})", cond
        )
    return np.linalg.solve(a, b)


def _triangular_factor(m: np.ndarray) -> np.ndarray:
    (r,) = qr(m, mode="r")
    return r


def _rho_matrix(r: np.ndarray, k: int) -> np.ndarray:
    """Entries whose max is the swap criterion rho(R, k).

    ``sqrt((R11^-1 R12)_ij^2 + (gamma_j(R22) / omega_i(R11))^2)``, where
    ``1/omega_i`` is the norm of row i of R11^-1 and ``gamma_j`` the norm of
    column j of R22 (identically zero when R has only k rows).
    """
    r11 = r[:k, :k]
    r12 = r[:k, k:]
    r11_inv = solve_triangular(r11, np.eye(k))
    coupling = r11_inv @ r12
    inv_omega = np.linalg.norm(r11_inv, axis=1)
    r22 = r[k:, k:]
    if r22.shape[0] == 0:
        return np.abs(coupling)
    gamma = np.linalg.norm(r22, axis=0)
    return np.sqrt(coupling**2 + np.outer(inv_omega, gamma) ** 2)


def rrqr_select(
    m, f: float = 1.05, k: int | None = None, max_interchanges: int = 10_000, pivoted_start: bool = True
) -> RrqrResult:
    """Pick ``k`` columns of ``m`` whose leading triangular block has large |det|.

    Starts from a column-pivoted QR (or, with ``pivoted_start=False``, from
    the columns in their given order) and then repeatedly interchanges a
    selected column with an unselected one while the interchange multiplies
    ``|det(R11)|`` by more than ``f``. On return no single interchange can
    increase the determinant by more than a factor ``f``.
    """
    m = as_matrix(m, "m")
    rows, cols = m.shape
    if k is None:
        k = rows
    if f < 1.0:
        raise ValueError(f"f must be >= 1, got {f}")
    if not 1 <= k <= min(rows, cols):
        raise ValueError(f"k={k} incompatible with a {rows}x{cols} matrix")

    _, r, piv = qr(m, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))[:k]
    tol = max(rows, cols) * np.finfo(float).eps * (diag[0] if diag.size else 0.0)
    if diag.size == 0 or diag[0] == 0.0 or diag[-1] <= tol:
        rank = int(np.sum(np.abs(np.diag(r)) > tol)) if diag.size else 0
        raise RankDeficientError(f"matrix has numerical rank {rank} < {k}; cannot select {k} independent columns")

    perm = [int(p) for p in piv] if pivoted_start else list(range(cols))
    r = _triangular_factor(m[:, perm])
    if not pivoted_start and np.any(np.abs(np.diag(r)[:k]) <= tol):
        # the given leading columns are dependent; fall back to the pivoted order
        perm = [int(p) for p in piv]
        r = _triangular_factor(m[:, perm])
    det = float(np.prod(np.abs(np.diag(r)[:k])))
    history = [det]
    swaps = 0
    while k < cols:
        rho = _rho_matrix(r, k)
        i, j = np.unravel_index(int(np.argmax(rho)), rho.shape)
        if rho[i, j] <= f:
            break
        if swaps >= max_interchanges:
            raise RuntimeError(f"RRQR did not converge within {max_interchanges} interchanges")
        trial = perm.copy()
        trial[i], trial[k + j] = trial[k + j], trial[i]
        r_new = _triangular_factor(m[:, trial])
        det_new = float(np.prod(np.abs(np.diag(r_new)[:k])))
        if not det_new > det:
            # rounding made the predicted gain vanish
            break
        perm, r, det = trial, r_new, det_new
        history.append(det)
        swaps += 1

    return RrqrResult(
        selected=tuple(perm[:k]),
        det_abs=det,
        interchange_count=swaps,
        det_history=tuple(history),
    )
