"""Optimization loop for the x0-predicting denoiser.

Per-step randomness (batch indices, timesteps, noise, label dropout) is
drawn from a generator seeded by ``(seed, step)``, so a run can be replayed
or resumed without carrying generator state around.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass

import numpy as np
import torch

from .diffusion import DiffusionSchedule, q_sample
from .errors import ConfigError, ShapeMismatch
from .losses import loss_dm, loss_inter
from .model import NULL_LABEL, ReactionDenoiser, save_checkpoint
from .motion import sequence_to_features, window_clip
from .rotations import Skeleton


@dataclass(frozen=True)
class TrainConfig:
    lambda_inter: float = 1.0
    batch_size: int = 16
    lr: float = 1e-4
    weight_decay: float = 0.0
    total_steps: int = 5000
    label_dropout_p: float = 0.1
    seed: int = 0
    clip_len: int = 60
    log_every: int = 100
    ckpt_every: int = 0

    def validate(self) -> "TrainConfig":
        if self.lambda_inter < 0:
            raise ConfigError("lambda_inter must be >= 0")
        if not 0 <= self.label_dropout_p < 1:
            raise ConfigError("label_dropout_p must lie in [0, 1)")
        if self.batch_size < 1 or self.total_steps < 0 or self.clip_len < 1 or self.lr <= 0:
            raise ConfigError("batch_size, clip_len and lr must be positive; total_steps >= 0")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TensorData:
    """Stacked training clips: reactor ``x`` and actor ``y`` features (M, N, D)."""
    x: torch.Tensor
    y: torch.Tensor
    labels: torch.Tensor  # (M,) long, -1 where unlabeled
    valid: torch.Tensor  # (M, N) bool

    def __len__(self):
        return self.x.shape[0]


def pairs_to_tensors(pairs, clip_len: int, dtype=torch.float32) -> TensorData:
    xs, ys, labels, valid = [], [], [], []
    for p in pairs:
        c = window_clip(p, clip_len)
        xs.append(sequence_to_features(c.reaction))
        ys.append(sequence_to_features(c.action))
        labels.append(-1 if c.label is None else c.label)
        valid.append(np.arange(clip_len) < c.valid_length)
    if not xs:
        raise ConfigError("no training pairs")
    return TensorData(torch.tensor(np.stack(xs), dtype=dtype), torch.tensor(np.stack(ys), dtype=dtype),
                      torch.tensor(labels, dtype=torch.long), torch.tensor(np.stack(valid)))


def step_generator(seed: int, step: int) -> torch.Generator:
    state = np.random.SeedSequence([int(seed), int(step)]).generate_state(2, dtype=np.uint32)
    return torch.Generator().manual_seed(int(state[0]) << 32 | int(state[1]))


def drop_labels(labels: torch.Tensor, p: float, gen: torch.Generator) -> torch.Tensor:
    """Replace each label with NULL_LABEL independently with probability ``p``."""
    drop = torch.rand(labels.shape, generator=gen) < p
    return torch.where(drop, torch.full_like(labels, NULL_LABEL), labels)


def compute_losses(model: ReactionDenoiser, x0, y, labels, valid, sched: DiffusionSchedule,
                   skel: Skeleton, cfg: TrainConfig, gen: torch.Generator) -> dict:
    b = x0.shape[0]
    t = torch.randint(0, sched.T, (b,), generator=gen)
    noise = torch.randn(x0.shape, generator=gen, dtype=x0.dtype)
    x_t = q_sample(x0, t, noise, sched)
    a = None
    if model.cfg.constrained:
        a = drop_labels(labels, cfg.label_dropout_p, gen)
    x0_hat = model(x_t, y, t, a)
    l_dm = loss_dm(x0, x0_hat, valid)
    if cfg.lambda_inter > 0:
        l_inter = loss_inter(x0, x0_hat, y, skel, valid)
        l_all = l_dm + cfg.lambda_inter * l_inter
    else:
        l_inter = torch.zeros((), dtype=x0.dtype)
        l_all = l_dm
    return {"loss_all": l_all, "loss_dm": l_dm, "loss_inter": l_inter}


def make_optimizer(model: ReactionDenoiser, cfg: TrainConfig) -> torch.optim.Optimizer:
    return torch.optim.AdamW(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)


def train_step(model, opt, data: TensorData, step: int, sched, skel, cfg: TrainConfig) -> dict:
    gen = step_generator(cfg.seed, step)
    m = len(data)
    if m >= cfg.batch_size:
        idx = torch.randperm(m, generator=gen)[: cfg.batch_size]
    else:
        idx = torch.randint(0, m, (cfg.batch_size,), generator=gen)
    if data.labels[idx].lt(0).any() and model.cfg.constrained:
        raise ConfigError("constrained training needs a label on every pair")
    model.train()
    losses = compute_losses(model, data.x[idx], data.y[idx], data.labels[idx], data.valid[idx],
                            sched, skel, cfg, gen)
    opt.zero_grad(set_to_none=True)
    losses["loss_all"].backward()
    opt.step()
    return {k: float(v.detach()) for k, v in losses.items()}


def train(model: ReactionDenoiser, data: TensorData, sched: DiffusionSchedule, skel: Skeleton,
          cfg: TrainConfig, log=None, ckpt_path=None, start_step: int = 0, opt=None) -> list[dict]:
    """Run ``cfg.total_steps`` steps from ``start_step``.

    ``log`` receives one formatted line per logged step.  With ``ckpt_path``
    a checkpoint is written every ``cfg.ckpt_every`` steps and on Ctrl-C.
    """
    cfg.validate()
    if data.x.shape[-1] != model.cfg.feature_dim:
        raise ShapeMismatch(f"data width {data.x.shape[-1]} != model width {model.cfg.feature_dim}")
    torch.manual_seed(cfg.seed)
    opt = opt or make_optimizer(model, cfg)
    history = []
    t0 = time.perf_counter()
    end = cfg.total_steps
    step = start_step
    try:
        while step < end:
            rec = train_step(model, opt, data, step, sched, skel, cfg)
            step += 1
            rec["step"] = step
            rec["wall"] = time.perf_counter() - t0
            history.append(rec)
            if log is not None and (step == end or (cfg.log_every and step % cfg.log_every == 0)):
                log(format_log(rec))
            if ckpt_path is not None and cfg.ckpt_every and step % cfg.ckpt_every == 0:
                save_training_checkpoint(ckpt_path, model, opt, sched, skel, cfg, step)
    except KeyboardInterrupt:
        if ckpt_path is not None:
            save_training_checkpoint(ckpt_path, model, opt, sched, skel, cfg, step)
        raise
    finally:
        model.eval()
    return history


def save_training_checkpoint(path, model, opt, sched, skel, cfg: TrainConfig, step: int):
    save_checkpoint(path, model, sched.T, skel,
                    {"step": step, "train": cfg.to_dict(), "optimizer": opt.state_dict()})


def format_log(rec: dict) -> str:
    return (f"step={rec['step']} loss_all={rec['loss_all']:.6g} loss_dm={rec['loss_dm']:.6g} "
            f"loss_inter={rec['loss_inter']:.6g} wall={rec['wall']:.2f}")


def grad_check(loss_fn, params, h: float = 1e-4, max_entries: int | None = None, seed: int = 0,
               floor: float = 1e-6) -> float:
    """Max relative error between autograd and central differences.

    ``params`` are float64 leaf tensors with ``requires_grad``; ``loss_fn()``
    returns a scalar.  With ``max_entries`` only that many random entries per
    tensor are probed.
    """
    params = list(params)
    for p in params:
        p.grad = None
    loss_fn().backward()
    analytic = [p.grad.detach().clone() for p in params]
    rng = np.random.default_rng(seed)
    worst = 0.0
    with torch.no_grad():
        for p, g in zip(params, analytic):
            flat, gflat = p.view(-1), g.view(-1)
            idx = np.arange(flat.numel())
            if max_entries is not None and len(idx) > max_entries:
                idx = rng.choice(idx, max_entries, replace=False)
            for i in idx:
                old = flat[i].item()
                flat[i] = old + h
                up = float(loss_fn())
                flat[i] = old - h
                down = float(loss_fn())
                flat[i] = old
                num = (up - down) / (2 * h)
                ana = gflat[i].item()
                worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), floor))
    return worst
