"""On-disk formats: binary cubes and matrices, raw imports, JSON run configs.

Cube files are ``b"HIR1"`` followed by little-endian u32 ``H, W, B`` and then
``H*W*B`` little-endian float32 samples, band-major (all of band 0 in
row-major order, then band 1, ...). Masks are ordinary cube files holding
0.0/1.0.

A matrix of shape ``rows x cols`` is stored as a cube with ``H = 1``,
``W = cols`` and ``B = rows``, which makes its payload the matrix in
row-major order.

Files are written in one call and are deterministic functions of the data.
Concurrent writers to the same path are not coordinated.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .guidance import STRENGTH_RULES, TASK_PRESETS
from .schedule import COSINE, DEFAULT_EXP_FLOOR, DEFAULT_EXP_K, EXPONENTIAL, LINEAR
from .tensor import as_cube, as_matrix

MAGIC = b"HIR1"
HEADER = struct.Struct("<4sIII")
MAX_DIM = 2**32 - 1


class CubeFormatError(ValueError):
    """A cube file is malformed."""


def _encode(x: np.ndarray) -> bytes:
    h, w, b = x.shape
    if max(h, w, b) > MAX_DIM:
        raise CubeFormatError(f"dimensions {x.shape} overflow the 32-bit header")
    payload = np.ascontiguousarray(x.transpose(2, 0, 1), dtype="<f4")
    return HEADER.pack(MAGIC, h, w, b) + payload.tobytes()


def _decode(data: bytes, source: str) -> np.ndarray:
    if len(data) < HEADER.size:
        raise CubeFormatError(f"{source}: {len(data)} bytes is shorter than the {HEADER.size}-byte header")
    magic, h, w, b = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CubeFormatError(f"{source}: bad magic {magic!r}, expected {MAGIC!r}")
    if min(h, w, b) == 0:
        raise CubeFormatError(f"{source}: empty dimensions {h}x{w}x{b}")
    expected = HEADER.size + 4 * h * w * b
    if len(data) < expected:
        raise CubeFormatError(f"{source}: truncated payload, expected {expected} bytes, found {len(data)}")
    if len(data) > expected:
        raise CubeFormatError(f"{source}: {len(data) - expected} trailing bytes after {expected}-byte cube")
    planes = np.frombuffer(data, dtype="<f4", offset=HEADER.size).reshape(b, h, w)
    return np.ascontiguousarray(planes.transpose(1, 2, 0), dtype=np.float64)


def save_cube(path, x) -> None:
    x = as_cube(x, "x")
    Path(path).write_bytes(_encode(x))


def load_cube(path) -> np.ndarray:
    p = Path(path)
    return _decode(p.read_bytes(), str(p))


def save_matrix(path, m) -> None:
    m = as_matrix(m, "m")
    save_cube(path, m.T[np.newaxis, :, :])


def load_matrix(path) -> np.ndarray:
    x = load_cube(path)
    if x.shape[0] != 1:
        raise CubeFormatError(f"{path}: a matrix file needs H = 1, found H = {x.shape[0]}")
    return np.ascontiguousarray(x[0].T)


INTERLEAVES = ("bsq", "bil", "bip")


def import_raw(path, h: int, w: int, b: int, dtype: str = "<f4", interleave: str = "bsq", scale: float = 1.0) -> np.ndarray:
    """Read a headerless sample array and return an H x W x B cube.

    ``interleave`` is the usual remote-sensing naming: ``bsq`` stores whole
    bands one after another, ``bil`` interleaves bands per image row and
    ``bip`` stores each pixel's spectrum contiguously. Samples are multiplied
    by ``scale`` (for example ``1 / 65535`` for 16-bit data).
    """
    if interleave not in INTERLEAVES:
        raise ValueError(f"interleave must be one of {INTERLEAVES}, got {interleave!r}")
    if min(h, w, b) < 1:
        raise ValueError("dimensions must be positive")
    dt = np.dtype(dtype)
    data = Path(path).read_bytes()
    expected = h * w * b * dt.itemsize
    if len(data) != expected:
        raise CubeFormatError(f"{path}: expected {expected} bytes for {h}x{w}x{b} {dt}, found {len(data)}")
    flat = np.frombuffer(data, dtype=dt).astype(np.float64) * scale
    if interleave == "bsq":
        x = flat.reshape(b, h, w).transpose(1, 2, 0)
    elif interleave == "bil":
        x = flat.reshape(h, b, w).transpose(0, 2, 1)
    else:
        x = flat.reshape(h, w, b)
    return as_cube(x, str(path))


TASKS = tuple(TASK_PRESETS)
SCHEDULE_DEFAULTS = {
    EXPONENTIAL: {"k": DEFAULT_EXP_K, "floor": DEFAULT_EXP_FLOOR},
    LINEAR: {"beta_start": 1e-4, "beta_end": 0.02, "base_steps": 1000},
    COSINE: {"offset": 0.008},
}


class ConfigError(ValueError):
    """A run configuration is invalid."""


@dataclass
class RunConfig:
    """Every knob of one degrade/restore run.

    ``lam`` and ``beta`` default to the task preset and ``schedule_params``
    to the schedule's defaults; :meth:`resolved` fills them in so a saved
    config reproduces a run without consulting any default.
    """

    task: str = "denoise"
    sigma255: float = 0.0
    scale: int = 2
    mask_rate: float = 0.8
    k: int = 3
    f: float = 1.05
    steps: int = 20
    schedule: str = EXPONENTIAL
    schedule_params: dict = field(default_factory=dict)
    lam: float | None = None
    beta: float | None = None
    tv_delta: float = 1e-3
    strength_rule: str = "constant"
    strength_scale: float = 1.0
    clamp_x0: bool = False
    seed: int = 0
    denoiser: str = "smooth:1.0"

    def resolved(self) -> "RunConfig":
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; choose from {TASKS}")
        if self.schedule not in SCHEDULE_DEFAULTS:
            raise ConfigError(f"unknown schedule {self.schedule!r}; choose from {tuple(SCHEDULE_DEFAULTS)}")
        if self.strength_rule not in STRENGTH_RULES:
            raise ConfigError(f"unknown strength rule {self.strength_rule!r}; choose from {STRENGTH_RULES}")
        defaults = SCHEDULE_DEFAULTS[self.schedule]
        unknown = set(self.schedule_params) - set(defaults)
        if unknown:
            raise ConfigError(f"unknown {self.schedule} schedule parameters {sorted(unknown)}")
        lam, beta = TASK_PRESETS[self.task]
        out = RunConfig(**{f.name: getattr(self, f.name) for f in fields(self)})
        out.schedule_params = {**defaults, **self.schedule_params}
        out.lam = lam if self.lam is None else float(self.lam)
        out.beta = beta if self.beta is None else float(self.beta)
        _validate(out)
        return out

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("run config must be a JSON object")
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise ConfigError(f"unknown config keys {unknown}")
        return cls(**d).resolved()

    def dumps(self) -> str:
        return json.dumps(self.resolved().to_dict(), indent=2, sort_keys=True) + "\n"


def _validate(c: RunConfig) -> None:
    def check(ok, msg):
        if not ok:
            raise ConfigError(msg)

    for name in ("sigma255", "mask_rate", "f", "lam", "beta", "tv_delta", "strength_scale"):
        v = getattr(c, name)
        check(isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v), f"{name} must be a finite number, got {v!r}")
    for name in ("scale", "k", "steps", "seed"):
        v = getattr(c, name)
        check(isinstance(v, int) and not isinstance(v, bool), f"{name} must be an integer, got {v!r}")
    check(isinstance(c.clamp_x0, bool), "clamp_x0 must be true or false")
    check(isinstance(c.denoiser, str) and c.denoiser, "denoiser must be a non-empty string")
    check(c.sigma255 >= 0, "sigma255 must be non-negative")
    check(c.scale >= 1, "scale must be at least 1")
    check(0 <= c.mask_rate < 1, "mask_rate must lie in [0, 1)")
    check(c.k >= 1, "k must be at least 1")
    check(c.f >= 1, "f must be at least 1")
    check(c.steps >= 1, "steps must be at least 1")
    check(c.seed >= 0, "seed must be non-negative")
    check(c.lam >= 0 and c.beta >= 0, "lam and beta must be non-negative")
    check(c.tv_delta > 0, "tv_delta must be positive")


def save_config(path, cfg: RunConfig) -> None:
    Path(path).write_text(cfg.dumps())


def load_config(path) -> RunConfig:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    return RunConfig.from_dict(d)
