"""Noise schedule, closed-form forward noising and x0-parameterized samplers.

Index convention: ``alpha_bar[t] = prod(alpha[0..t])`` for ``t`` in ``[0, T)``,
so ``q_sample(x0, t)`` is the state after ``t + 1`` single-step transitions.
All randomness comes from caller seeds or caller-supplied noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .errors import ConfigError, ScheduleError, ShapeMismatch

COSINE_OFFSET = 0.008
ALPHA_CLIP = (0.001, 0.999)


@dataclass(frozen=True, eq=False)
class DiffusionSchedule:
    alpha: np.ndarray
    alpha_bar: np.ndarray

    @property
    def T(self) -> int:
        return len(self.alpha)


def cosine_alpha_bar(u, s: float = COSINE_OFFSET):
    """Continuous cumulative signal level at normalized time u in [0, 1]."""
    f = lambda v: np.cos((np.asarray(v, dtype=np.float64) + s) / (1 + s) * np.pi / 2) ** 2
    return f(u) / f(0.0)


def cosine_schedule(T: int, s: float = COSINE_OFFSET, clip=ALPHA_CLIP) -> DiffusionSchedule:
    if T < 2:
        raise ConfigError(f"diffusion needs T >= 2 timesteps, got {T}")
    grid = cosine_alpha_bar(np.arange(T + 1) / T, s)
    alpha = np.clip(grid[1:] / grid[:-1], *clip)
    alpha_bar = np.empty(T)
    acc = 1.0
    for t in range(T):
        acc = acc * alpha[t]
        alpha_bar[t] = acc
    alpha.setflags(write=False)
    alpha_bar.setflags(write=False)
    return DiffusionSchedule(alpha, alpha_bar)


def _coef(values, t, like: torch.Tensor) -> torch.Tensor:
    """Gather schedule values at int or per-item timesteps, broadcastable against ``like``."""
    if isinstance(t, torch.Tensor) and t.ndim > 0:
        c = torch.tensor(values, dtype=like.dtype)[t.long()]
        return c.reshape(c.shape + (1,) * (like.ndim - c.ndim))
    return torch.tensor(float(values[int(t)]), dtype=like.dtype)


def _check_t(t, sched):
    lo, hi = (int(t.min()), int(t.max())) if isinstance(t, torch.Tensor) and t.ndim > 0 else (int(t), int(t))
    if lo < 0 or hi >= sched.T:
        raise ScheduleError(f"timestep outside [0, {sched.T})")


def q_sample(x0: torch.Tensor, t, noise: torch.Tensor, sched: DiffusionSchedule) -> torch.Tensor:
    """sqrt(abar_t) * x0 + sqrt(1 - abar_t) * noise."""
    if x0.shape != noise.shape:
        raise ShapeMismatch(f"x0 {tuple(x0.shape)} and noise {tuple(noise.shape)} differ")
    _check_t(t, sched)
    ab = _coef(sched.alpha_bar, t, x0)
    return ab.sqrt() * x0 + (1 - ab).sqrt() * noise


def q_step(x_prev: torch.Tensor, t: int, noise: torch.Tensor, sched: DiffusionSchedule) -> torch.Tensor:
    """One forward transition x_{t-1} -> x_t with variance 1 - alpha_t."""
    a = float(sched.alpha[t])
    return math.sqrt(a) * x_prev + math.sqrt(1 - a) * noise


def ddim_step(x_t: torch.Tensor, x0_hat: torch.Tensor, t: int, t_prev: int,
              sched: DiffusionSchedule) -> torch.Tensor:
    """Deterministic (eta = 0) DDIM update; ``t_prev = -1`` returns ``x0_hat``."""
    if not (0 <= t < sched.T and -1 <= t_prev < t):
        raise ScheduleError(f"need T > t > t_prev >= -1, got t={t}, t_prev={t_prev}")
    if t_prev == -1:
        return x0_hat
    ab_t = float(sched.alpha_bar[t])
    ab_p = float(sched.alpha_bar[t_prev])
    eps = (x_t - math.sqrt(ab_t) * x0_hat) / math.sqrt(1 - ab_t)
    return math.sqrt(ab_p) * x0_hat + math.sqrt(1 - ab_p) * eps


def ddpm_step(x_t: torch.Tensor, x0_hat: torch.Tensor, t: int, sched: DiffusionSchedule,
              generator: torch.Generator) -> torch.Tensor:
    """Ancestral sample from the posterior q(x_{t-1} | x_t, x0_hat)."""
    if t == 0:
        return x0_hat
    a, ab, ab_p = float(sched.alpha[t]), float(sched.alpha_bar[t]), float(sched.alpha_bar[t - 1])
    mean = (math.sqrt(ab_p) * (1 - a) * x0_hat + math.sqrt(a) * (1 - ab_p) * x_t) / (1 - ab)
    var = (1 - ab_p) / (1 - ab) * (1 - a)
    noise = torch.randn(x_t.shape, generator=generator, dtype=x_t.dtype)
    return mean + math.sqrt(var) * noise


def timesteps(T: int, steps: int) -> list[int]:
    """``steps`` evenly spaced timesteps over [0, T), descending, always starting at T - 1."""
    if not 1 <= steps <= T:
        raise ConfigError(f"steps must lie in [1, {T}], got {steps}")
    return [int(v) for v in np.round(np.linspace(T - 1, 0, steps))]


def sample(denoiser, shape, steps: int, sched: DiffusionSchedule, seed: int, cond: dict | None = None,
           inpaint=None, method: str = "ddim", dtype=torch.float32) -> torch.Tensor:
    """Run the reverse process and return the final x0 prediction.

    ``denoiser(x_t, t, **cond)`` must return an x0 estimate.  ``inpaint`` is an
    optional ``(known, mask)`` pair: after every step the masked entries are
    replaced with ``known`` noised to the new timestep, and with ``known``
    itself in the output.  ``method="ddpm"`` runs all T ancestral steps.
    """
    cond = cond or {}
    gen = torch.Generator().manual_seed(int(seed))
    x = torch.randn(shape, generator=gen, dtype=dtype)
    if method == "ddim":
        ts = timesteps(sched.T, steps)
    elif method == "ddpm":
        ts = list(range(sched.T - 1, -1, -1))
    else:
        raise ConfigError(f"unknown sampling method {method!r}")

    def clamp(x, t):
        if inpaint is None:
            return x
        known, mask = inpaint
        if t < 0:
            target = known
        else:
            target = q_sample(known, t, torch.randn(known.shape, generator=gen, dtype=dtype), sched)
        return torch.where(mask, target, x)

    x = clamp(x, ts[0])
    for i, t in enumerate(ts):
        t_prev = ts[i + 1] if i + 1 < len(ts) else -1
        x0_hat = denoiser(x, t, **cond)
        if method == "ddim":
            x = ddim_step(x, x0_hat, t, t_prev, sched)
        else:
            x = ddpm_step(x, x0_hat, t, sched, gen)
        x = clamp(x, t_prev)
    return x
