"""Cumulative noise schedules.

A schedule stores the cumulative signal fractions for steps ``t = 1..T`` as
a precomputed array; ``alpha_bar(0)`` is 1 by convention (the clean end of
the chain).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LINEAR = "linear"
COSINE = "cosine"
EXPONENTIAL = "exponential"

DEFAULT_EXP_K = 6.0
DEFAULT_EXP_FLOOR = 1e-4
MAX_BETA = 0.999


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    alphas: np.ndarray
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        a = np.asarray(self.alphas, dtype=np.float64)
        if a.ndim != 1 or a.size < 1:
            raise ValueError("schedule must be a non-empty 1-D sequence")
        if not np.all((a > 0) & (a <= 1)):
            raise ValueError("every alpha_bar must lie in (0, 1]")
        if a.size > 1 and not np.all(np.diff(a) < 0):
            raise ValueError("alpha_bar must be strictly decreasing in t")
        a.setflags(write=False)
        object.__setattr__(self, "alphas", a)

    def __len__(self) -> int:
        return self.alphas.size

    @property
    def steps(self) -> int:
        return self.alphas.size

    def alpha_bar(self, t: int) -> float:
        if t == 0:
            return 1.0
        if not 1 <= t <= self.steps:
            raise IndexError(f"step {t} outside 0..{self.steps}")
        return float(self.alphas[t - 1])

    def rows(self):
        """``(t, alpha_bar_t)`` pairs for t = 1..T."""
        return [(t, float(a)) for t, a in enumerate(self.alphas, start=1)]


def exponential_schedule(t_steps: int, k: float = DEFAULT_EXP_K, floor: float = DEFAULT_EXP_FLOOR) -> NoiseSchedule:
    """``exp(-k t / T)`` rescaled so that step 1 maps to 1 and step T to ``floor``."""
    if t_steps < 2:
        raise ValueError("exponential schedule needs at least 2 steps")
    if not k > 0:
        raise ValueError(f"decay rate k must be positive, got {k}")
    if not 0 < floor < 1:
        raise ValueError(f"floor must lie in (0, 1), got {floor}")
    t = np.arange(1, t_steps + 1, dtype=np.float64)
    raw = np.exp(-k * t / t_steps)
    lo, hi = raw[-1], raw[0]
    alphas = (raw - lo) / (hi - lo) * (1.0 - floor) + floor
    # pin the endpoints against rounding in the affine map
    alphas[0] = 1.0
    alphas[-1] = floor
    return NoiseSchedule(alphas, EXPONENTIAL, {"k": float(k), "floor": float(floor)})


def linear_schedule(
    t_steps: int, beta_start: float = 1e-4, beta_end: float = 0.02, base_steps: int = 1000
) -> NoiseSchedule:
    """The usual linear-beta chain, sampled at ``t_steps`` evenly spaced steps.

    Betas run linearly from ``beta_start`` to ``beta_end`` over a
    ``base_steps``-step chain with ``alpha_bar = prod (1 - beta)``; step t of
    the returned schedule is base step ``round(t * base_steps / t_steps)``.
    This is how a short sampler reuses a network trained on the long chain.
    Pass ``base_steps=t_steps`` for betas that are linear in the sampling step
    itself.
    """
    if t_steps < 1:
        raise ValueError("need at least one step")
    if base_steps < t_steps:
        raise ValueError(f"base_steps={base_steps} must be at least t_steps={t_steps}")
    for name, b in (("beta_start", beta_start), ("beta_end", beta_end)):
        if not 0 < b < 1:
            raise ValueError(f"{name} must lie in (0, 1), got {b}")
    betas = np.linspace(beta_start, beta_end, base_steps)
    chain = np.cumprod(1.0 - betas)
    idx = np.rint(np.arange(1, t_steps + 1) * (base_steps / t_steps)).astype(int) - 1
    params = {"beta_start": float(beta_start), "beta_end": float(beta_end), "base_steps": int(base_steps)}
    return NoiseSchedule(chain[idx], LINEAR, params)


def cosine_schedule(t_steps: int, offset: float = 0.008) -> NoiseSchedule:
    """Squared-cosine cumulative schedule with per-step betas capped at 0.999."""
    if t_steps < 1:
        raise ValueError("need at least one step")

    def f(u):
        return np.cos((u + offset) / (1.0 + offset) * np.pi / 2.0) ** 2

    t = np.arange(0, t_steps + 1, dtype=np.float64) / t_steps
    target = f(t) / f(0.0)
    betas = np.minimum(1.0 - target[1:] / target[:-1], MAX_BETA)
    alphas = np.cumprod(1.0 - betas)
    return NoiseSchedule(alphas, COSINE, {"offset": float(offset)})


def make_schedule(kind: str, t_steps: int, **params) -> NoiseSchedule:
    if kind == EXPONENTIAL:
        return exponential_schedule(t_steps, params.get("k", DEFAULT_EXP_K), params.get("floor", DEFAULT_EXP_FLOOR))
    if kind == LINEAR:
        return linear_schedule(t_steps, **params)
    if kind == COSINE:
        return cosine_schedule(t_steps, params.get("offset", 0.008))
    raise ValueError(f"unknown schedule kind {kind!r}")
