"""Offline batch generation and frame-by-frame online generation.

Online scheme: each new actor frame triggers a fresh DDIM run over the last
``W`` frames.  Reactor frames already emitted are held fixed through the
sampler's inpainting hook, and only the newest frame is emitted.  Combined
with the causal mask this means frame ``n`` never depends on actor frames
after ``n``.
"""

from __future__ import annotations

import time

import numpy as np
import torch

from .diffusion import DiffusionSchedule, sample
from .errors import ConfigError, SessionNotInitialized, ShapeMismatch
from .model import NULL_LABEL, ReactionDenoiser
from .motion import MotionSequence, features_to_sequence, sequence_to_features


def guided_denoiser(model: ReactionDenoiser, y: torch.Tensor, label=None, guidance: float = 1.0):
    """Closure ``(x_t, t) -> x0_hat`` with classifier-free guidance when ``guidance != 1``."""
    b = y.shape[0]
    a = None
    if model.cfg.constrained and label is not None:
        a = torch.as_tensor(label, dtype=torch.long).expand(b) if torch.as_tensor(label).ndim == 0 \
            else torch.as_tensor(label, dtype=torch.long)
    null = torch.full((b,), NULL_LABEL, dtype=torch.long) if model.cfg.constrained else None

    def den(x_t, t):
        tt = torch.full((b,), int(t), dtype=torch.long)
        cond = model(x_t, y, tt, a)
        if guidance == 1.0 or a is None:
            return cond
        uncond = model(x_t, y, tt, null)
        return uncond + guidance * (cond - uncond)

    return den


@torch.no_grad()
def generate_features(model: ReactionDenoiser, y, sched: DiffusionSchedule, ddim_steps: int = 5,
                      seed: int = 0, label=None, guidance: float = 1.0, method: str = "ddim") -> torch.Tensor:
    """Sample reactor features for a batch of actor features ``y`` (B, N, D) in one sampler call."""
    model.eval()
    dtype = model.out.weight.dtype
    y = torch.as_tensor(y, dtype=dtype)
    squeeze = y.ndim == 2
    if squeeze:
        y = y[None]
    if y.shape[-1] != model.cfg.feature_dim:
        raise ShapeMismatch(f"actor width {y.shape[-1]} != model width {model.cfg.feature_dim}")
    out = sample(guided_denoiser(model, y, label, guidance), tuple(y.shape), ddim_steps, sched, seed,
                 method=method, dtype=dtype)
    return out[0] if squeeze else out


def generate_offline(model: ReactionDenoiser, actor: MotionSequence, sched: DiffusionSchedule,
                     ddim_steps: int = 5, seed: int = 0, label=None, guidance: float = 1.0) -> MotionSequence:
    y = torch.from_numpy(sequence_to_features(actor))
    feats = generate_features(model, y, sched, ddim_steps, seed, label, guidance)
    return features_to_sequence(feats.double().numpy(), actor.fps)


def frame_seed(seed: int, n: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(n)]).generate_state(1, dtype=np.uint64)[0] >> 1)


class OnlineSession:
    """Stateful, strictly ordered online generator for one actor stream."""

    def __init__(self, model: ReactionDenoiser, sched: DiffusionSchedule, ddim_steps: int = 5,
                 window: int | None = None, seed: int = 0, label=None, guidance: float = 1.0):
        self.window = int(window if window is not None else model.cfg.max_len)
        if not 1 <= self.window <= model.cfg.max_len:
            raise ConfigError(f"window must lie in [1, {model.cfg.max_len}], got {self.window}")
        self.model = model.eval()
        self.sched = sched
        self.ddim_steps = ddim_steps
        self.seed = seed
        self.label = label
        self.guidance = guidance
        self.dtype = model.out.weight.dtype
        self.actor_history: list[torch.Tensor] = []
        self.emitted: list[torch.Tensor] = []
        self.latencies_ms: list[float] = []

    def close(self):
        self.model = None

    @torch.no_grad()
    def step(self, actor_frame) -> tuple[torch.Tensor, float]:
        if self.model is None:
            raise SessionNotInitialized("session is closed or was never initialized")
        frame = torch.as_tensor(actor_frame, dtype=self.dtype).reshape(-1)
        if frame.shape[0] != self.model.cfg.feature_dim:
            raise ShapeMismatch(f"actor frame width {frame.shape[0]} != {self.model.cfg.feature_dim}")
        n = len(self.actor_history)
        self.actor_history.append(frame)
        w = min(n + 1, self.window)
        y = torch.stack(self.actor_history[-w:])[None]
        known = torch.zeros_like(y)
        mask = torch.zeros(y.shape, dtype=torch.bool)
        if w > 1:
            known[0, : w - 1] = torch.stack(self.emitted[-(w - 1):])
            mask[0, : w - 1] = True
        den = guided_denoiser(self.model, y, self.label, self.guidance)
        t0 = time.perf_counter()
        out = sample(den, tuple(y.shape), self.ddim_steps, self.sched, frame_seed(self.seed, n),
                     inpaint=(known, mask), dtype=self.dtype)
        latency = (time.perf_counter() - t0) * 1000.0
        new = out[0, -1].clone()
        self.emitted.append(new)
        self.latencies_ms.append(latency)
        return new, latency

    def reaction_features(self) -> torch.Tensor:
        return torch.stack(self.emitted) if self.emitted else torch.zeros(0, self.model.cfg.feature_dim)


def online_step(session: OnlineSession | None, new_actor_frame):
    if not isinstance(session, OnlineSession):
        raise SessionNotInitialized("online_step needs an OnlineSession")
    return session.step(new_actor_frame)


def stream_actor(model, actor_feats, sched, ddim_steps=5, window=None, seed=0, label=None,
                 guidance: float = 1.0) -> torch.Tensor:
    """Run a session over every frame of ``actor_feats`` (N, D); returns emitted frames (N, D)."""
    sess = OnlineSession(model, sched, ddim_steps, window, seed, label, guidance)
    for f in torch.as_tensor(actor_feats):
        sess.step(f)
    return sess.reaction_features()


def measure_latency(model: ReactionDenoiser, sched: DiffusionSchedule, ddim_steps_list, frames: int = 100,
                    window: int | None = None, seed: int = 0, warmup: int = 3) -> dict[int, float]:
    """Median per-frame latency (ms) of the online denoising loop for each step count."""
    if frames < 1:
        raise ConfigError("frames must be >= 1")
    g = torch.Generator().manual_seed(seed)
    stream = torch.randn(frames, model.cfg.feature_dim, generator=g).to(model.out.weight.dtype)
    table = {}
    for steps in ddim_steps_list:
        sess = OnlineSession(model, sched, steps, window, seed)
        for f in stream[:warmup]:
            sess.step(f)
        sess = OnlineSession(model, sched, steps, window, seed)
        for f in stream:
            sess.step(f)
        table[int(steps)] = float(np.median(sess.latencies_ms))
    return table
