"""Independent oracles shared by the unit and acceptance tests."""

import math

import numpy as np

from hirdiff.degradation import DegradationOp, blur_downsample_default, random_mask
from hirdiff.guidance import guidance_gradient, guidance_loss


def tv_loop(x, delta):
    h, w, b = x.shape
    total = 0.0
    for k in range(b):
        for i in range(h):
            for j in range(w):
                if i + 1 < h:
                    d = x[i + 1, j, k] - x[i, j, k]
                    total += math.sqrt(d * d + delta * delta) - delta
                if j + 1 < w:
                    d = x[i, j + 1, k] - x[i, j, k]
                    total += math.sqrt(d * d + delta * delta) - delta
    return total


def operators(h, w, b, seed=0):
    """One operator of each kind for an h x w x b cube (h, w divisible by 2)."""
    return {
        "identity": DegradationOp.identity(),
        "blur_downsample": blur_downsample_default(2),
        "mask": DegradationOp.masked(random_mask(h, w, b, 0.8, seed)),
    }


def fd_relative_errors(a0, e, y, op, cfg, positions, step=1e-6):
    """Per-coordinate relative error of the analytic gradient against central differences."""
    g = guidance_gradient(a0, e, y, op, cfg)
    errs = []
    for idx in positions:
        ap = a0.copy()
        am = a0.copy()
        ap[idx] += step
        am[idx] -= step
        fd = (guidance_loss(ap, e, y, op, cfg) - guidance_loss(am, e, y, op, cfg)) / (2 * step)
        errs.append(abs(g[idx] - fd) / max(abs(g[idx]), abs(fd), 1e-6))
    return np.array(errs)


def random_positions(shape, n, rng):
    flat = rng.choice(int(np.prod(shape)), size=min(n, int(np.prod(shape))), replace=False)
    return [tuple(int(v) for v in np.unravel_index(i, shape)) for i in flat]
