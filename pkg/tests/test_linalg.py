import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hirdiff.linalg import (
    RankDeficientError,
    SingularMatrixError,
    det_abs,
    rrqr_select,
    solve_square,
    truncated_svd,
)
from hirdiff.tensor import ShapeError


def cofactor_det(m):
    m = [list(map(float, row)) for row in m]
    n = len(m)
    if n == 1:
        return m[0][0]
    total = 0.0
    for j in range(n):
        minor = [row[:j] + row[j + 1 :] for row in m[1:]]
        total += (-1) ** j * m[0][j] * cofactor_det(minor)
    return total


def best_subset_det(m, k):
    return max(abs(np.linalg.det(m[:, list(c)])) for c in itertools.combinations(range(m.shape[1]), k))


def orthonormal_rows(r, k, b):
    q, _ = np.linalg.qr(r.standard_normal((b, k)))
    return q.T


# -- truncated SVD


def test_svd_diagonal():
    svd = truncated_svd(np.diag([3.0, 2.0, 1.0]), 2)
    np.testing.assert_allclose(svd.s, [3.0, 2.0])
    assert np.linalg.norm(np.diag([3.0, 2.0, 1.0]) - svd.approximation()) == pytest.approx(1.0, abs=1e-12)


def test_svd_exact_rank(rng):
    m = rng.standard_normal((30, 3)) @ rng.standard_normal((3, 10))
    svd = truncated_svd(m, 3)
    assert np.linalg.norm(m - svd.approximation()) <= 1e-10 * np.linalg.norm(m)


def test_svd_error_matches_tail_singular_values(rng):
    m = rng.standard_normal((20, 8))
    full = np.linalg.svd(m, compute_uv=False)
    svd = truncated_svd(m, 3)
    assert np.linalg.norm(m - svd.approximation()) == pytest.approx(math.sqrt(np.sum(full[3:] ** 2)), rel=1e-12)


def test_svd_invariants_and_sign_convention(rng):
    svd = truncated_svd(rng.standard_normal((25, 6)), 4)
    np.testing.assert_allclose(svd.u.T @ svd.u, np.eye(4), atol=1e-10)
    np.testing.assert_allclose(svd.v.T @ svd.v, np.eye(4), atol=1e-10)
    assert np.all(np.diff(svd.s) <= 0) and np.all(svd.s >= 0)
    for j in range(4):
        col = svd.v[:, j]
        assert col[np.argmax(np.abs(col))] > 0


def test_svd_sign_is_stable_under_input_sign_flip(rng):
    m = rng.standard_normal((12, 5))
    a = truncated_svd(m, 3)
    b = truncated_svd(-m, 3)
    np.testing.assert_allclose(a.v, b.v, atol=1e-12)
    np.testing.assert_allclose(a.u, -b.u, atol=1e-12)


def test_svd_rank_out_of_range():
    with pytest.raises(ValueError):
        truncated_svd(np.eye(3), 0)
    with pytest.raises(ValueError):
        truncated_svd(np.eye(3), 4)


def test_svd_beats_random_rank_k_factorizations(rng):
    m = rng.standard_normal((6, 5))
    best = np.linalg.norm(m - truncated_svd(m, 2).approximation())
    for _ in range(200):
        p = rng.standard_normal((6, 2))
        # optimal right factor for this left factor
        q = np.linalg.lstsq(p, m, rcond=None)[0]
        assert best <= np.linalg.norm(m - p @ q) + 1e-12


# -- determinants and solves


def test_det_abs_examples(rng):
    assert det_abs(np.eye(4)) == 1.0
    assert det_abs(np.array([[1.0, 2.0, 3.0], [1.0, 2.0, 3.0], [0.0, 1.0, 5.0]])) == 0.0
    m = rng.standard_normal((3, 3))
    assert det_abs(m) == pytest.approx(abs(cofactor_det(m)), rel=1e-12)
    with pytest.raises(ShapeError):
        det_abs(np.zeros((2, 3)))


def test_solve_square_examples(rng):
    b = rng.standard_normal((3, 4))
    np.testing.assert_array_equal(solve_square(np.eye(3), b), b)
    np.testing.assert_allclose(solve_square(np.diag([2.0, 4.0]), np.array([[2.0], [4.0]])), [[1.0], [1.0]])
    a = rng.standard_normal((5, 5)) + 5 * np.eye(5)
    b = rng.standard_normal((5, 2))
    x = solve_square(a, b)
    assert np.linalg.norm(a @ x - b) <= 1e-10 * np.linalg.norm(b)


def test_solve_square_rejects_near_singular():
    a = np.array([[1.0, 1.0], [1.0, 1.0 + 1e-14]])
    with pytest.raises(SingularMatrixError) as err:
        solve_square(a, np.ones((2, 1)))
    assert err.value.condition > 1e12


# -- RRQR


def test_rrqr_hand_example():
    s = 1 / math.sqrt(2)
    res = rrqr_select(np.array([[1.0, 0.0, s], [0.0, 1.0, s]]), f=1.05)
    assert set(res.selected) == {0, 1}
    assert res.det_abs == pytest.approx(1.0, abs=1e-12)


def test_rrqr_square_input_selects_everything(rng):
    res = rrqr_select(rng.standard_normal((3, 3)))
    assert sorted(res.selected) == [0, 1, 2]
    assert res.interchange_count == 0


def test_rrqr_errors():
    with pytest.raises(ValueError):
        rrqr_select(np.eye(3), f=0.99)
    deficient = np.array([[1.0, 2.0, 3.0, 4.0], [2.0, 4.0, 6.0, 8.0]])
    with pytest.raises(RankDeficientError, match="rank 1"):
        rrqr_select(deficient)


def test_rrqr_identity_start_makes_strictly_increasing_swaps():
    # the first two columns are nearly parallel, so the identity start is poor
    m = np.array([[1.0, 1.0, 0.0, 0.3], [0.0, 0.01, 1.0, 0.2]])
    res = rrqr_select(m, f=1.0, pivoted_start=False)
    assert res.interchange_count >= 1
    assert all(b > a for a, b in zip(res.det_history, res.det_history[1:]))
    assert res.det_abs == pytest.approx(best_subset_det(m, 2), rel=1e-12)


def _assert_locally_optimal(m, res, f):
    base = abs(np.linalg.det(m[:, list(res.selected)]))
    assert base == pytest.approx(res.det_abs, rel=1e-10)
    k = len(res.selected)
    rest = [c for c in range(m.shape[1]) if c not in res.selected]
    for i in range(k):
        for c in rest:
            trial = list(res.selected)
            trial[i] = c
            assert abs(np.linalg.det(m[:, trial])) <= f * base * (1 + 1e-10)


def test_rrqr_local_optimality(rng):
    for _ in range(20):
        m = orthonormal_rows(rng, 3, 10)
        _assert_locally_optimal(m, rrqr_select(m, 1.05), 1.05)


@given(st.integers(0, 2**32 - 1), st.integers(1, 3), st.integers(3, 12), st.booleans())
def test_rrqr_properties(seed, k, b, pivoted):
    r = np.random.default_rng(seed)
    m = orthonormal_rows(r, k, b)
    f = 1.05
    res = rrqr_select(m, f, pivoted_start=pivoted)
    assert len(set(res.selected)) == k
    _assert_locally_optimal(m, res, f)
    # Hadamard: every column of a K x K block of orthonormal rows has norm <= 1
    assert res.det_abs <= 1 + 1e-12
    assert all(b2 > b1 for b1, b2 in zip(res.det_history, res.det_history[1:]))
    assert res.interchange_count == len(res.det_history) - 1


def test_rrqr_usually_close_to_exhaustive_optimum(rng):
    # single-interchange optimality does not imply the f^k bound, but it
    # holds on the large majority of random inputs
    f = 1.05
    ratios = []
    for _ in range(100):
        m = rng.standard_normal((3, 10))
        ratios.append(best_subset_det(m, 3) / rrqr_select(m, f).det_abs)
    assert min(ratios) >= 1 - 1e-12
    assert np.mean(np.array(ratios) <= f**3) >= 0.95


def test_rrqr_local_optimum_can_miss_the_f_cubed_bound():
    m = np.array(
        [
            [0.284, 1.613, -0.706, -1.202, -1.255, -0.476, 0.5, -0.157, -0.689, -1.108, -0.235, 0.62],
            [1.115, 1.249, 0.71, 0.304, -0.624, 0.311, 1.484, 0.108, 0.745, 0.002, 0.474, -0.926],
            [-1.281, -0.983, -1.948, 0.86, 2.384, -0.209, -0.794, 0.356, 1.595, 0.09, 1.284, -0.01],
        ]
    )
    res = rrqr_select(m, 1.05)
    _assert_locally_optimal(m, res, 1.05)
    assert best_subset_det(m, 3) / res.det_abs == pytest.approx(1.3730058890794221, rel=1e-9)
