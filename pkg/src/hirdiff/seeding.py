"""Seeded random streams.

Every stochastic routine takes an explicit integer seed. Streams are numpy
``PCG64`` generators keyed by ``SeedSequence([seed, stream])`` so that the
noise, the mask and the sampler's starting point drawn from one user seed are
statistically independent yet reproducible bit for bit across platforms.
"""

import numpy as np

NOISE_STREAM = 1
MASK_STREAM = 2
SAMPLER_STREAM = 3
SYNTH_STREAM = 4


def rng(seed: int, stream: int = 0) -> np.random.Generator:
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(stream)])))
