"""Linear degradation operators with exact adjoints, plus noise injection.

Three operators cover the restoration tasks: identity (denoising),
blur followed by decimation (super-resolution) and a binary mask
(inpainting). All act band by band in the spatial dimensions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import seeding
from .tensor import ShapeError, as_cube

IDENTITY = "identity"
BLUR_DOWNSAMPLE = "blur_downsample"
MASK = "mask"


@dataclass(frozen=True, eq=False)
class DegradationOp:
    """A known linear operator H and the noise level of the observation.

    ``sigma`` is in unit range (a 0-255 level divided by 255).
    """

    kind: str
    kernel: np.ndarray | None = None
    scale: int = 1
    mask: np.ndarray | None = None
    sigma: float = 0.0

    def __post_init__(self):
        if self.kind not in (IDENTITY, BLUR_DOWNSAMPLE, MASK):
            raise ValueError(f"unknown degradation kind {self.kind!r}")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.kind == BLUR_DOWNSAMPLE:
            k = np.asarray(self.kernel, dtype=np.float64)
            if k.ndim != 2 or k.shape[0] % 2 == 0 or k.shape[1] % 2 == 0:
                raise ValueError(f"blur kernel must be 2-D with odd sides, got {k.shape}")
            if abs(k.sum() - 1.0) > 1e-10:
                raise ValueError(f"blur kernel must sum to 1, sums to {k.sum()!r}")
            if int(self.scale) != self.scale or self.scale < 1:
                raise ValueError(f"scale must be a positive integer, got {self.scale}")
            object.__setattr__(self, "kernel", k)
            object.__setattr__(self, "scale", int(self.scale))
        elif self.kind == MASK:
            m = np.asarray(self.mask, dtype=np.float64)
            if m.ndim != 3:
                raise ShapeError(f"mask must be an H x W x B cube, got {m.shape}")
            if not np.all((m == 0.0) | (m == 1.0)):
                raise ValueError("mask entries must be 0 or 1")
            object.__setattr__(self, "mask", m)

    @classmethod
    def identity(cls, sigma: float = 0.0) -> "DegradationOp":
        return cls(IDENTITY, sigma=sigma)

    @classmethod
    def blur_downsample(cls, kernel, scale: int, sigma: float = 0.0) -> "DegradationOp":
        return cls(BLUR_DOWNSAMPLE, kernel=kernel, scale=scale, sigma=sigma)

    @classmethod
    def masked(cls, mask, sigma: float = 0.0) -> "DegradationOp":
        return cls(MASK, mask=mask, sigma=sigma)

    def output_shape(self, shape: tuple[int, int, int]) -> tuple[int, int, int]:
        h, w, b = shape
        if self.kind == BLUR_DOWNSAMPLE:
            if h % self.scale or w % self.scale:
                raise ShapeError(f"{h}x{w} not divisible by scale {self.scale}")
            return h // self.scale, w // self.scale, b
        if self.kind == MASK and self.mask.shape != (h, w, b):
            raise ShapeError(f"mask shape {self.mask.shape} does not match cube {shape}")
        return h, w, b

    def input_shape(self, shape: tuple[int, int, int]) -> tuple[int, int, int]:
        h, w, b = shape
        if self.kind == BLUR_DOWNSAMPLE:
            return h * self.scale, w * self.scale, b
        if self.kind == MASK and self.mask.shape != (h, w, b):
            raise ShapeError(f"mask shape {self.mask.shape} does not match cube {shape}")
        return h, w, b

    def band(self, b: int) -> "DegradationOp":
        """The operator restricted to band ``b``."""
        if self.kind == MASK:
            return DegradationOp.masked(self.mask[:, :, b : b + 1], self.sigma)
        return self

    def __call__(self, x) -> np.ndarray:
        return apply(self, x)

    def adjoint(self, y) -> np.ndarray:
        return adjoint(self, y)


def _pad_index(n: int, pad: int) -> np.ndarray:
    # half-sample symmetric reflection: ... b a | a b c ... c b | b ...
    return np.pad(np.arange(n), pad, mode="symmetric")


def _blur(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    kh, kw = kernel.shape
    ph, pw = kh // 2, kw // 2
    h, w, _ = x.shape
    xp = x[_pad_index(h, ph)][:, _pad_index(w, pw)]
    flipped = kernel[::-1, ::-1]
    out = np.zeros_like(x)
    for u in range(kh):
        for v in range(kw):
            c = flipped[u, v]
            if c != 0.0:
                out += c * xp[u : u + h, v : v + w]
    return out


def _blur_adjoint(z: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    kh, kw = kernel.shape
    ph, pw = kh // 2, kw // 2
    h, w, nb = z.shape
    flipped = kernel[::-1, ::-1]
    zp = np.zeros((h + 2 * ph, w + 2 * pw, nb))
    for u in range(kh):
        for v in range(kw):
            c = flipped[u, v]
            if c != 0.0:
                zp[u : u + h, v : v + w] += c * z
    rows = np.zeros((h, w + 2 * pw, nb))
    np.add.at(rows, _pad_index(h, ph), zp)
    out = np.zeros((h, w, nb))
    np.add.at(out, (slice(None), _pad_index(w, pw)), rows)
    return out


def gaussian_blur(x, std: float, size: int | None = None) -> np.ndarray:
    """Per-band Gaussian smoothing with symmetric boundaries."""
    if size is None:
        size = 2 * max(1, math.ceil(3 * std)) + 1
    return _blur(as_cube(x), gaussian_kernel(size, std))


def apply(op: DegradationOp, x) -> np.ndarray:
    """Noise-free degradation ``H(x)``."""
    x = as_cube(x, "x")
    op.output_shape(x.shape)
    if op.kind == IDENTITY:
        return x.copy()
    if op.kind == MASK:
        return x * op.mask
    s = op.scale
    return np.ascontiguousarray(_blur(x, op.kernel)[::s, ::s])


def adjoint(op: DegradationOp, y) -> np.ndarray:
    """Exact adjoint ``H^T(y)``."""
    y = as_cube(y, "y")
    shape = op.input_shape(y.shape)
    if op.kind == IDENTITY:
        return y.copy()
    if op.kind == MASK:
        return y * op.mask
    s = op.scale
    z = np.zeros(shape)
    z[::s, ::s] = y
    return _blur_adjoint(z, op.kernel)


def gaussian_kernel(size: int, std: float) -> np.ndarray:
    """Normalised, symmetric ``size x size`` Gaussian stencil."""
    if size < 1 or size % 2 == 0:
        raise ValueError(f"kernel size must be a positive odd integer, got {size}")
    if not std > 0:
        raise ValueError(f"kernel std must be positive, got {std}")
    r = np.arange(size) - size // 2
    g = np.exp(-(r.astype(np.float64) ** 2) / (2.0 * std * std))
    k = np.outer(g, g)
    return k / k.sum()


def random_mask(h: int, w: int, b: int, rate: float, seed: int) -> np.ndarray:
    """Binary cube with exactly ``floor(rate * h * w * b)`` zeros."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"mask rate must lie in [0, 1), got {rate}")
    n = h * w * b
    zeros = int(math.floor(rate * n))
    flat = np.ones(n)
    flat[seeding.rng(seed, seeding.MASK_STREAM).permutation(n)[:zeros]] = 0.0
    return flat.reshape(h, w, b)


def add_gaussian_noise(x, sigma255: float, seed: int) -> np.ndarray:
    """``x`` plus i.i.d. normal noise of std ``sigma255 / 255``; no clipping."""
    if sigma255 < 0:
        raise ValueError(f"noise level must be non-negative, got {sigma255}")
    x = as_cube(x, "x")
    if sigma255 == 0:
        return x.copy()
    z = seeding.rng(seed, seeding.NOISE_STREAM).standard_normal(x.shape)
    return x + (sigma255 / 255.0) * z


def blur_downsample_default(scale: int, sigma: float = 0.0, size: int = 9) -> DegradationOp:
    """Super-resolution operator with the default 9-tap Gaussian of std ``scale``."""
    return DegradationOp.blur_downsample(gaussian_kernel(size, float(scale)), scale, sigma)
