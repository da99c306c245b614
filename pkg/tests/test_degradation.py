import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import ndimage

from hirdiff.degradation import (
    DegradationOp,
    add_gaussian_noise,
    adjoint,
    apply,
    blur_downsample_default,
    gaussian_blur,
    gaussian_kernel,
    random_mask,
)
from hirdiff.tensor import ShapeError


def ops_for(shape, seed=0):
    h, w, b = shape
    yield DegradationOp.identity()
    for s in (2, 4):
        if h % s == 0 and w % s == 0:
            yield blur_downsample_default(s)
    for rate in (0.7, 0.8, 0.9):
        yield DegradationOp.masked(random_mask(h, w, b, rate, seed))


def test_identity_and_mask_examples(rng):
    x = rng.standard_normal((4, 5, 3))
    np.testing.assert_array_equal(apply(DegradationOp.identity(), x), x)
    np.testing.assert_array_equal(apply(DegradationOp.masked(np.ones(x.shape)), x), x)
    np.testing.assert_array_equal(apply(DegradationOp.masked(np.zeros(x.shape)), x), np.zeros(x.shape))
    m = random_mask(4, 5, 3, 0.5, 1)
    np.testing.assert_array_equal(adjoint(DegradationOp.masked(m), x), m * x)
    np.testing.assert_array_equal(adjoint(DegradationOp.identity(), x), x)


def test_hand_decimation():
    x = np.arange(16, dtype=float).reshape(4, 4, 1)
    op = DegradationOp.blur_downsample(np.ones((1, 1)), 2)
    out = apply(op, x)
    assert out.shape == (2, 2, 1)
    assert out[:, :, 0].tolist() == [[x[0, 0, 0], x[0, 2, 0]], [x[2, 0, 0], x[2, 2, 0]]]


@pytest.mark.parametrize("kernel_shape", [(3, 3), (5, 3), (9, 9)])
def test_blur_matches_ndimage_convolution(rng, kernel_shape):
    k = rng.uniform(size=kernel_shape)
    k /= k.sum()
    x = rng.standard_normal((12, 10, 2))
    op = DegradationOp.blur_downsample(k, 1)
    for b in range(2):
        ref = ndimage.convolve(x[:, :, b], k, mode="reflect")
        np.testing.assert_allclose(apply(op, x)[:, :, b], ref, rtol=1e-12, atol=1e-12)


def test_gaussian_blur_matches_ndimage(rng):
    x = rng.standard_normal((16, 16, 1))
    k = gaussian_kernel(7, 1.0)
    np.testing.assert_allclose(gaussian_blur(x, 1.0)[:, :, 0], ndimage.convolve(x[:, :, 0], k, mode="reflect"), atol=1e-12)


def test_output_shapes():
    op = blur_downsample_default(4)
    assert op.output_shape((16, 8, 3)) == (4, 2, 3)
    assert op.input_shape((4, 2, 3)) == (16, 8, 3)
    with pytest.raises(ShapeError):
        apply(op, np.zeros((10, 8, 1)))
    with pytest.raises(ShapeError):
        apply(DegradationOp.masked(np.ones((2, 2, 1))), np.zeros((3, 2, 1)))


def test_operator_validation():
    with pytest.raises(ValueError):
        DegradationOp.blur_downsample(np.ones((2, 2)) / 4, 2)
    with pytest.raises(ValueError):
        DegradationOp.blur_downsample(np.ones((3, 3)), 2)
    with pytest.raises(ValueError):
        DegradationOp.blur_downsample(gaussian_kernel(3, 1), 0)
    with pytest.raises(ValueError):
        DegradationOp.masked(np.full((2, 2, 1), 0.5))
    with pytest.raises(ValueError):
        DegradationOp("warp")
    with pytest.raises(ValueError):
        DegradationOp.identity(sigma=-1)


def test_gaussian_kernel_examples():
    assert gaussian_kernel(1, 3.0).tolist() == [[1.0]]
    k = gaussian_kernel(3, 1e-3)
    assert k[1, 1] == pytest.approx(1.0) and k.sum() == pytest.approx(1.0, abs=1e-15)
    k = gaussian_kernel(9, 2.0)
    assert abs(k.sum() - 1) <= 1e-12
    np.testing.assert_allclose(np.rot90(k), k, atol=1e-15)
    np.testing.assert_allclose(k, k.T, atol=1e-15)
    with pytest.raises(ValueError):
        gaussian_kernel(4, 1.0)
    with pytest.raises(ValueError):
        gaussian_kernel(3, 0.0)


def test_random_mask():
    assert random_mask(3, 3, 2, 0.0, 0).min() == 1.0
    m = random_mask(10, 10, 1, 0.9, 7)
    assert int((m == 0).sum()) == 90
    np.testing.assert_array_equal(m, random_mask(10, 10, 1, 0.9, 7))
    assert not np.array_equal(m, random_mask(10, 10, 1, 0.9, 8))
    with pytest.raises(ValueError):
        random_mask(2, 2, 2, 1.0, 0)


def test_noise_statistics():
    x = np.zeros((100, 100, 12))
    out = add_gaussian_noise(x, 30, 0)
    d = out - x
    sigma = 30 / 255
    assert abs(d.std() / sigma - 1) < 0.02
    assert abs(d.mean()) < 3 * sigma / np.sqrt(d.size)
    np.testing.assert_array_equal(out, add_gaussian_noise(x, 30, 0))
    np.testing.assert_array_equal(add_gaussian_noise(x + 0.5, 0, 0), x + 0.5)
    with pytest.raises(ValueError):
        add_gaussian_noise(x, -1, 0)


def test_noise_is_not_clipped():
    out = add_gaussian_noise(np.full((20, 20, 2), 0.99), 50, 0)
    assert out.max() > 1 and out.min() < 0.99


def test_band_view():
    m = random_mask(4, 4, 3, 0.5, 0)
    op = DegradationOp.masked(m)
    np.testing.assert_array_equal(op.band(1).mask[:, :, 0], m[:, :, 1])
    assert blur_downsample_default(2).band(0).kind == "blur_downsample"


shapes = st.tuples(st.sampled_from([4, 8, 12]), st.sampled_from([4, 8, 12]), st.integers(1, 3))


@given(shapes, st.integers(0, 2**32 - 1))
def test_adjoint_dot_product(shape, seed):
    r = np.random.default_rng(seed)
    for op in ops_for(shape, seed):
        x = r.standard_normal(shape)
        y = r.standard_normal(op.output_shape(shape))
        lhs = np.vdot(apply(op, x), y)
        rhs = np.vdot(x, adjoint(op, y))
        assert abs(lhs - rhs) <= 1e-10 * np.linalg.norm(x) * np.linalg.norm(y)


@given(shapes, st.integers(0, 2**32 - 1))
def test_linearity(shape, seed):
    r = np.random.default_rng(seed)
    a, b = r.standard_normal(2)
    for op in ops_for(shape, seed):
        x, y = r.standard_normal((2, *shape))
        np.testing.assert_allclose(apply(op, a * x + b * y), a * apply(op, x) + b * apply(op, y), atol=1e-12 * 10)


@given(shapes, st.integers(0, 2**32 - 1))
def test_band_separability(shape, seed):
    r = np.random.default_rng(seed)
    x = r.standard_normal(shape)
    for op in ops_for(shape, seed):
        full = apply(op, x)
        for b in range(shape[2]):
            np.testing.assert_array_equal(apply(op.band(b), x[:, :, b : b + 1])[:, :, 0], full[:, :, b])
