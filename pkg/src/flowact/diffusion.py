"""Diffusion-process arithmetic: schedules, noising, parameterisations,
DDPM/DDIM reverse steps, min-SNR weighting, EMA and frame-index sampling.

Timesteps are 0-based: ``alpha_bars[t]`` for t in [0, T). ``t = -1`` denotes
the clean signal (alpha_bar = 1) and is the target of the final reverse step.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Literal, Protocol

import numpy as np

from .errors import InvalidRange, InvalidTimestep, ShapeMismatch

Kind = Literal["noise", "clean", "velocity"]

DEFAULT_TIMESTEPS = 100
DEFAULT_FRAMES = 8
MIN_SNR_GAMMA = 5.0
EMA_DECAY = 0.999
EMA_UPDATE_EVERY = 10
BETA_MAX = 0.999


@dataclass(frozen=True, eq=False)
class DiffusionSchedule:
    betas: np.ndarray
    alpha_bars: np.ndarray

    def __post_init__(self):
        b = np.array(self.betas, dtype=np.float64)
        a = np.array(self.alpha_bars, dtype=np.float64)
        if b.shape != a.shape or b.ndim != 1 or b.size < 1:
            raise ValueError("betas and alpha_bars must be equal-length vectors")
        if not np.all((b > 0) & (b < 1)):
            raise ValueError("betas must lie in (0, 1)")
        for arr in (b, a):
            arr.setflags(write=False)
        object.__setattr__(self, "betas", b)
        object.__setattr__(self, "alpha_bars", a)

    @classmethod
    def from_betas(cls, betas) -> "DiffusionSchedule":
        betas = np.asarray(betas, dtype=np.float64)
        return cls(betas, np.cumprod(1.0 - betas))

    @property
    def timesteps(self) -> int:
        return self.betas.size

    def alpha_bar(self, t: int) -> float:
        if t == -1:
            return 1.0
        self.check(t)
        return float(self.alpha_bars[t])

    def check(self, t: int) -> None:
        if not (isinstance(t, (int, np.integer)) and 0 <= t < self.timesteps):
            raise InvalidTimestep(f"timestep {t!r} outside [0, {self.timesteps})")

    def snr(self, t: int) -> float:
        a = self.alpha_bar(t)
        return a / (1.0 - a)

    def to_json(self) -> str:
        return json.dumps(
            {"schema": "flowact.schedule/1", "betas": self.betas.tolist(), "alpha_bars": self.alpha_bars.tolist()}
        )


def cosine_schedule(timesteps: int = DEFAULT_TIMESTEPS, s: float = 0.008) -> DiffusionSchedule:
    """Cosine schedule: alpha_bar follows cos^2 of the normalised time."""
    if timesteps < 1:
        raise ValueError("timesteps must be >= 1")
    x = np.arange(timesteps + 1, dtype=np.float64) / timesteps
    f = np.cos((x + s) / (1 + s) * np.pi / 2) ** 2
    betas = np.minimum(1.0 - f[1:] / f[:-1], BETA_MAX)
    return DiffusionSchedule.from_betas(betas)


def linear_schedule(timesteps: int = DEFAULT_TIMESTEPS, beta_start: float = 1e-4, beta_end: float = 0.02) -> DiffusionSchedule:
    return DiffusionSchedule.from_betas(np.linspace(beta_start, beta_end, timesteps))


def _same_shape(*arrays) -> None:
    shapes = {np.shape(a) for a in arrays}
    if len(shapes) != 1:
        raise ShapeMismatch(f"shape mismatch: {sorted(shapes)}")


def q_sample(x0, t: int, noise, sched: DiffusionSchedule) -> np.ndarray:
    _same_shape(x0, noise)
    a = sched.alpha_bar(t)
    return np.sqrt(a) * np.asarray(x0, dtype=np.float64) + np.sqrt(1.0 - a) * np.asarray(noise, dtype=np.float64)


def convert_prediction(pred, kind: Kind, x_t, t: int, sched: DiffusionSchedule):
    """Return (x0_hat, eps_hat, v_hat) from a prediction of any kind."""
    _same_shape(pred, x_t)
    pred = np.asarray(pred, dtype=np.float64)
    x_t = np.asarray(x_t, dtype=np.float64)
    ab = sched.alpha_bar(t)
    a, b = np.sqrt(ab), np.sqrt(1.0 - ab)
    if kind == "velocity":
        v = pred
        x0 = a * x_t - b * v
        eps = b * x_t + a * v
    elif kind == "noise":
        eps = pred
        if a == 0:
            raise InvalidTimestep("clean estimate undefined where alpha_bar = 0")
        x0 = (x_t - b * eps) / a
        v = a * eps - b * x0
    elif kind == "clean":
        x0 = pred
        if b == 0:
            eps = np.zeros_like(x0)
        else:
            eps = (x_t - a * x0) / b
        v = a * eps - b * x0
    else:
        raise ValueError(f"unknown prediction kind {kind!r}")
    return x0, eps, v


def velocity_target(x0, noise, t: int, sched: DiffusionSchedule) -> np.ndarray:
    _same_shape(x0, noise)
    ab = sched.alpha_bar(t)
    return np.sqrt(ab) * np.asarray(noise, dtype=np.float64) - np.sqrt(1.0 - ab) * np.asarray(x0, dtype=np.float64)


def min_snr_weight(t: int, sched: DiffusionSchedule, gamma: float = MIN_SNR_GAMMA) -> float:
    """Loss weight for the velocity objective: min(SNR, gamma) / (SNR + 1)."""
    snr = sched.snr(t)
    return min(snr, gamma) / (snr + 1.0)


# ---------------------------------------------------------------------------
# denoisers


class Denoiser(Protocol):
    kind: Kind

    def __call__(self, x_t: np.ndarray, t: int, cond=None) -> np.ndarray: ...


@dataclass
class FunctionDenoiser:
    """Wrap a plain function ``fn(x_t, t, cond)`` with its parameterisation."""

    fn: Callable
    kind: Kind = "noise"

    def __call__(self, x_t, t, cond=None):
        return self.fn(x_t, t, cond)


@dataclass
class GaussianOracleDenoiser:
    """Exact posterior-mean denoiser for data ~ N(mean, std^2) per element.

    E[x0 | x_t] = (sqrt(ab) std^2 x_t + (1 - ab) mean) / (ab std^2 + 1 - ab)
    """

    mean: float
    std: float
    sched: DiffusionSchedule
    kind: Kind = "noise"

    def clean_estimate(self, x_t, t):
        ab = self.sched.alpha_bar(t)
        var = self.std**2
        return (np.sqrt(ab) * var * x_t + (1.0 - ab) * self.mean) / (ab * var + 1.0 - ab)

    def __call__(self, x_t, t, cond=None):
        x_t = np.asarray(x_t, dtype=np.float64)
        x0 = self.clean_estimate(x_t, t)
        ab = self.sched.alpha_bar(t)
        a, b = np.sqrt(ab), np.sqrt(1.0 - ab)
        eps = (x_t - a * x0) / b
        if self.kind == "clean":
            return x0
        if self.kind == "noise":
            return eps
        return a * eps - b * x0


def _predict(denoiser, x_t, t, sched, cond):
    pred = denoiser(x_t, t, cond)
    if np.shape(pred) != np.shape(x_t):
        raise ShapeMismatch(f"denoiser returned {np.shape(pred)} for input {np.shape(x_t)}")
    return convert_prediction(pred, denoiser.kind, x_t, t, sched)


# ---------------------------------------------------------------------------
# reverse steps


def ddpm_step(x_t, t: int, denoiser, sched: DiffusionSchedule, rng: np.random.Generator, cond=None) -> np.ndarray:
    """Ancestral step x_t -> x_{t-1}; at t = 0 returns the clean estimate."""
    sched.check(t)
    x_t = np.asarray(x_t, dtype=np.float64)
    x0, _, _ = _predict(denoiser, x_t, t, sched, cond)
    if t == 0:
        return x0
    ab, ab_prev = sched.alpha_bar(t), sched.alpha_bar(t - 1)
    beta = sched.betas[t]
    mean = (np.sqrt(ab_prev) * beta / (1.0 - ab)) * x0 + (np.sqrt(1.0 - beta) * (1.0 - ab_prev) / (1.0 - ab)) * x_t
    var = beta * (1.0 - ab_prev) / (1.0 - ab)
    return mean + np.sqrt(var) * rng.standard_normal(x_t.shape)


def ddim_step(
    x_t, t: int, t_prev: int, denoiser, sched: DiffusionSchedule, eta: float = 0.0, rng=None, cond=None
) -> np.ndarray:
    """Generalised DDIM step; deterministic for eta = 0. ``t_prev = -1`` returns x0_hat."""
    sched.check(t)
    if t_prev != -1:
        sched.check(t_prev)
    if not t_prev < t:
        raise InvalidTimestep(f"t_prev={t_prev} must be below t={t}")
    x_t = np.asarray(x_t, dtype=np.float64)
    x0, eps, _ = _predict(denoiser, x_t, t, sched, cond)
    if t_prev == -1:
        return x0
    ab, ab_prev = sched.alpha_bar(t), sched.alpha_bar(t_prev)
    sigma = eta * np.sqrt((1.0 - ab_prev) / (1.0 - ab)) * np.sqrt(1.0 - ab / ab_prev)
    out = np.sqrt(ab_prev) * x0 + np.sqrt(1.0 - ab_prev - sigma**2) * eps
    if sigma > 0:
        if rng is None:
            raise ValueError("eta > 0 needs an rng")
        out = out + sigma * rng.standard_normal(x_t.shape)
    return out


def ddim_timesteps(timesteps: int, steps: int) -> list[int]:
    """Descending subsequence from T-1 to 0 with ``steps`` entries."""
    if not 1 <= steps <= timesteps:
        raise InvalidTimestep(f"steps={steps} must be in [1, {timesteps}]")
    if steps == 1:
        return [timesteps - 1]
    ts = np.floor(np.linspace(timesteps - 1, 0, steps) + 0.5).astype(int)
    return [int(t) for t in ts]


def ddpm_sample(shape, denoiser, sched: DiffusionSchedule, rng: np.random.Generator, cond=None) -> np.ndarray:
    x = rng.standard_normal(shape)
    for t in range(sched.timesteps - 1, -1, -1):
        x = ddpm_step(x, t, denoiser, sched, rng, cond)
    return x


def ddim_sample(x_T, denoiser, sched: DiffusionSchedule, steps: int | None = None, eta: float = 0.0, rng=None, cond=None, timesteps=None):
    """Run DDIM from ``x_T`` over ``timesteps`` (or an evenly spaced subset)."""
    if timesteps is None:
        timesteps = ddim_timesteps(sched.timesteps, steps or sched.timesteps)
    seq = list(timesteps) + [-1]
    x = np.asarray(x_T, dtype=np.float64)
    for t, t_prev in zip(seq[:-1], seq[1:]):
        x = ddim_step(x, t, t_prev, denoiser, sched, eta=eta, rng=rng, cond=cond)
    return x


def training_loss(x0, noise, t: int, pred, kind: Kind, sched: DiffusionSchedule, gamma: float | None = MIN_SNR_GAMMA) -> float:
    """Weighted L2 loss of a prediction against its target parameterisation."""
    x0 = np.asarray(x0, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    _same_shape(x0, noise, pred)
    target = {"noise": noise, "clean": x0, "velocity": velocity_target(x0, noise, t, sched)}[kind]
    w = 1.0 if gamma is None else min_snr_weight(t, sched, gamma)
    return float(w * np.mean((np.asarray(pred) - target) ** 2))


# ---------------------------------------------------------------------------
# parameter averaging


def ema_update(ema, current, decay: float = EMA_DECAY) -> np.ndarray:
    _same_shape(ema, current)
    return decay * np.asarray(ema, dtype=np.float64) + (1.0 - decay) * np.asarray(current, dtype=np.float64)


# ---------------------------------------------------------------------------
# frame sampling


@dataclass(frozen=True)
class FrameIndexPlan:
    indices: tuple

    def __len__(self):
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)


def _round_half_up(x: np.ndarray) -> np.ndarray:
    return np.floor(x + 0.5).astype(int)


def sample_frames_adaptive(video_len: int, T: int = DEFAULT_FRAMES, rng=None, start: int | None = None) -> FrameIndexPlan:
    """Current frame, T-2 evenly spaced intermediates, and the final frame."""
    if video_len < 1:
        raise InvalidRange(f"video_len must be >= 1, got {video_len}")
    if T < 2:
        raise InvalidRange(f"T must be >= 2, got {T}")
    last = video_len - 1
    if start is None:
        start = int(np.random.default_rng(rng).integers(0, video_len))
    if not 0 <= start <= last:
        raise InvalidRange(f"start {start} outside [0, {last}]")
    idx = _round_half_up(np.linspace(start, last, T))
    idx = np.maximum.accumulate(np.clip(idx, start, last))
    idx[-1] = last
    return FrameIndexPlan(tuple(int(i) for i in idx))


def sample_frames_consecutive(video_len: int, start: int, T: int = DEFAULT_FRAMES) -> FrameIndexPlan:
    """T consecutive frames from ``start``; past the end the last frame repeats."""
    if video_len < 1:
        raise InvalidRange(f"video_len must be >= 1, got {video_len}")
    if T < 1:
        raise InvalidRange(f"T must be >= 1, got {T}")
    if not 0 <= start < video_len:
        raise InvalidRange(f"start {start} outside [0, {video_len})")
    return FrameIndexPlan(tuple(min(start + k, video_len - 1) for k in range(T)))
