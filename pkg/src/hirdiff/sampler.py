"""Guided deterministic DDIM sampling of the reduced image.

Each reverse step t = T..1:

1. predict the clean reduced image from the denoiser's noise estimate,
2. evaluate the guidance loss there,
3. add the guidance gradient (taken w.r.t. the current sample, holding the
   denoiser output fixed) to the noise estimate,
4. take a deterministic DDIM step with the guided noise.

The restored cube is the final reduced image times the coefficient matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Protocol, Union, runtime_checkable

import numpy as np

from . import seeding
from .degradation import DegradationOp, gaussian_blur
from .guidance import GuidanceConfig, guidance_loss, loss_and_gradient
from .schedule import NoiseSchedule
from .subspace import SubspaceEstimate, estimate_coefficients, reconstruct
from .tensor import ShapeError, as_cube, extract_bands

X0_CLAMP = (-1.0, 3.0)


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage name and reverse step."""

    def __init__(self, stage: str, step: int | None, cause: BaseException):
        where = f" at step {step}" if step is not None else ""
        super().__init__(f"{stage} failed{where}: {cause}")
        self.stage = stage
        self.step = step


@runtime_checkable
class Denoiser(Protocol):
    def predict_noise(self, a_t: np.ndarray, t: int, alpha_bar: float) -> np.ndarray: ...


DenoiserFactory = Callable[[SubspaceEstimate], Denoiser]


def predict_x0(a_t, eps, alpha_bar: float) -> np.ndarray:
    """Clean-sample estimate ``(a_t - sqrt(1 - abar) eps) / sqrt(abar)``."""
    if not 0 < alpha_bar <= 1:
        raise ValueError(f"alpha_bar must lie in (0, 1], got {alpha_bar}")
    return (np.asarray(a_t) - math.sqrt(1.0 - alpha_bar) * np.asarray(eps)) / math.sqrt(alpha_bar)


def ddim_step(a_t, eps_hat, alpha_bar_t: float, alpha_bar_prev: float) -> np.ndarray:
    """Deterministic (eta = 0) DDIM move from step t to t-1."""
    if not 0 < alpha_bar_prev <= 1:
        raise ValueError(f"alpha_bar_prev must lie in (0, 1], got {alpha_bar_prev}")
    if alpha_bar_prev < alpha_bar_t:
        raise ValueError(f"schedule not monotone: alpha_bar_prev={alpha_bar_prev} < alpha_bar_t={alpha_bar_t}")
    x0 = predict_x0(a_t, eps_hat, alpha_bar_t)
    return math.sqrt(alpha_bar_prev) * x0 + math.sqrt(1.0 - alpha_bar_prev) * np.asarray(eps_hat)


class OracleDenoiser:
    """Returns the exact noise that separates ``a_t`` from a known clean image."""

    def __init__(self, clean_a):
        self.clean_a = as_cube(clean_a, "clean_a")

    def predict_noise(self, a_t, t, alpha_bar):
        if alpha_bar >= 1.0:
            return np.zeros_like(self.clean_a)
        return (np.asarray(a_t) - math.sqrt(alpha_bar) * self.clean_a) / math.sqrt(1.0 - alpha_bar)


def oracle_denoiser(clean_a) -> OracleDenoiser:
    return OracleDenoiser(clean_a)


class SmoothingDenoiser:
    """Surrogate prior: the clean estimate is a Gaussian smoothing of ``a_t / sqrt(abar)``."""

    def __init__(self, kernel_std: float):
        if not kernel_std > 0:
            raise ValueError("kernel_std must be positive")
        self.kernel_std = float(kernel_std)

    def predict_noise(self, a_t, t, alpha_bar):
        a_t = np.asarray(a_t, dtype=np.float64)
        if alpha_bar >= 1.0:
            return np.zeros_like(a_t)
        x0 = gaussian_blur(a_t / math.sqrt(alpha_bar), self.kernel_std)
        return (a_t - math.sqrt(alpha_bar) * x0) / math.sqrt(1.0 - alpha_bar)


def smoothing_denoiser(kernel_std: float) -> SmoothingDenoiser:
    return SmoothingDenoiser(kernel_std)


def oracle_from_clean(clean_x) -> DenoiserFactory:
    """Factory building an oracle on whichever bands the estimator selects."""
    clean_x = as_cube(clean_x, "clean_x")

    def build(est: SubspaceEstimate) -> Denoiser:
        return OracleDenoiser(extract_bands(clean_x, est.band_indices))

    return build


@dataclass
class SamplerConfig:
    schedule: NoiseSchedule
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)
    denoiser: Union[Denoiser, DenoiserFactory, None] = None
    seed: int = 0
    rrqr_f: float = 1.05
    clamp_x0: bool = False

    @property
    def t_steps(self) -> int:
        return self.schedule.steps


@dataclass
class RestorationResult:
    x0: np.ndarray
    a0: np.ndarray
    per_step_loss: np.ndarray
    e: np.ndarray
    estimate: SubspaceEstimate | None = None


def guided_epsilon(a_t, t: int, denoiser: Denoiser, e, y, op: DegradationOp, cfg: GuidanceConfig, schedule: NoiseSchedule, clamp_x0: bool = False):
    """Denoiser output plus ``s(t) * grad_{A_t} L(x0_hat)``.

    The gradient w.r.t. the current sample is ``grad_{x0_hat} L / sqrt(abar_t)``
    since the denoiser output is held constant.
    """
    eps_hat, loss, _ = _guided(a_t, t, denoiser, e, y, op, cfg, schedule, clamp_x0)
    return eps_hat


def _guided(a_t, t, denoiser, e, y, op, cfg, schedule, clamp_x0):
    ab = schedule.alpha_bar(t)
    try:
        eps = np.asarray(denoiser.predict_noise(a_t, t, ab), dtype=np.float64)
    except Exception as exc:
        raise StageError("denoiser", t, exc) from exc
    if eps.shape != a_t.shape:
        raise StageError("denoiser", t, ShapeError(f"returned {eps.shape}, expected {a_t.shape}"))
    if not np.all(np.isfinite(eps)):
        raise StageError("denoiser", t, ValueError("non-finite noise estimate"))
    x0 = predict_x0(a_t, eps, ab)
    if clamp_x0:
        x0 = np.clip(x0, *X0_CLAMP)
        if ab < 1.0:
            eps = (a_t - math.sqrt(ab) * x0) / math.sqrt(1.0 - ab)
    s = cfg.strength(ab)
    try:
        if s == 0.0:
            return eps, guidance_loss(x0, e, y, op, cfg), x0
        loss, grad = loss_and_gradient(x0, e, y, op, cfg)
    except Exception as exc:
        raise StageError("guidance", t, exc) from exc
    return eps + (s / math.sqrt(ab)) * grad, loss, x0


def _resolve_denoiser(spec, est: SubspaceEstimate) -> Denoiser:
    if spec is None:
        raise ValueError("no denoiser configured")
    if isinstance(spec, Denoiser):
        return spec
    return spec(est)


def run_restoration(y, op: DegradationOp, k: int, cfg: SamplerConfig, estimate: SubspaceEstimate | None = None) -> RestorationResult:
    """Estimate E from ``y`` and sample the reduced image by guided DDIM."""
    y = as_cube(y, "y")
    if estimate is None:
        try:
            estimate = estimate_coefficients(y, k, cfg.rrqr_f)
        except Exception as exc:
            raise StageError("coefficient estimation", None, exc) from exc
    e = estimate.e
    try:
        h, w, _ = op.input_shape(y.shape)
        denoiser = _resolve_denoiser(cfg.denoiser, estimate)
    except Exception as exc:
        raise StageError("setup", None, exc) from exc

    sched = cfg.schedule
    a = seeding.rng(cfg.seed, seeding.SAMPLER_STREAM).standard_normal((h, w, estimate.rank))
    losses = np.empty(sched.steps)
    for t in range(sched.steps, 0, -1):
        eps_hat, loss, _ = _guided(a, t, denoiser, e, y, op, cfg.guidance, sched, cfg.clamp_x0)
        losses[sched.steps - t] = loss
        try:
            a = ddim_step(a, eps_hat, sched.alpha_bar(t), sched.alpha_bar(t - 1))
        except Exception as exc:
            raise StageError("ddim step", t, exc) from exc
        if not np.all(np.isfinite(a)):
            raise StageError("ddim step", t, FloatingPointError("sample diverged to non-finite values"))
    a0 = np.ascontiguousarray(a)
    return RestorationResult(x0=reconstruct(a0, e), a0=a0, per_step_loss=losses, e=e, estimate=estimate)
