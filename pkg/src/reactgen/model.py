"""Conditional x0-predicting Transformer denoiser.

Frame tokens: the noisy reaction and the actor features are projected to
``d`` separately, concatenated, fused back to ``d`` and summed with a fixed
sinusoidal positional encoding.  The condition token is the timestep
embedding plus (constrained mode) a label embedding.  The decoder backbone
self-attends over frame tokens under the directional mask and cross-attends
to the condition token; the encoder backbone (offline variant) prepends the
condition token instead.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import torch
from torch import nn

from .errors import CheckpointError, ConfigError, LabelOutOfRange, ShapeMismatch
from .rotations import Skeleton

NULL_LABEL = -1
CHECKPOINT_FORMAT = "reactgen-checkpoint/1"


@dataclass(frozen=True)
class DenoiserConfig:
    feature_dim: int
    d: int = 512
    layers: int = 8
    heads: int = 8
    ffn_width: int = 1024
    mode: str = "online"  # online: causal mask; offline: full attention
    arch: str = "decoder"  # decoder units, or the encoder-only offline variant
    constrained: bool = False
    num_classes: int = 0
    max_len: int = 256
    dropout: float = 0.0

    def validate(self) -> "DenoiserConfig":
        if self.mode not in ("online", "offline"):
            raise ConfigError(f"mode must be online or offline, got {self.mode!r}")
        if self.arch not in ("decoder", "encoder"):
            raise ConfigError(f"arch must be decoder or encoder, got {self.arch!r}")
        if self.arch == "encoder" and self.mode != "offline":
            raise ConfigError("the encoder backbone has no directional mask; it requires mode=offline")
        if self.d < 1 or self.d % self.heads:
            raise ConfigError(f"d={self.d} must be a positive multiple of heads={self.heads}")
        if self.layers < 1:
            raise ConfigError("layers must be >= 1")
        if self.constrained and self.num_classes < 1:
            raise ConfigError("constrained mode needs num_classes >= 1")
        if self.feature_dim < 1 or self.max_len < 1:
            raise ConfigError("feature_dim and max_len must be positive")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DenoiserConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise CheckpointError(f"unknown config fields {sorted(unknown)}")
        return cls(**d)


def directional_mask(n: int, mode: str) -> torch.Tensor:
    """Boolean (n, n) mask; ``allowed[i, j]`` means token i may attend to token j."""
    if n < 1:
        raise ConfigError("mask needs n >= 1")
    if mode == "online":
        return torch.ones(n, n, dtype=torch.bool).tril()
    if mode == "offline":
        return torch.ones(n, n, dtype=torch.bool)
    raise ConfigError(f"unknown mode {mode!r}")


def sinusoidal_encoding(positions: torch.Tensor, d: int) -> torch.Tensor:
    """(..., d) sin/cos encoding of (possibly fractional) positions."""
    half = d // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / max(half, 1))
    ang = positions.to(torch.float64)[..., None] * freqs
    enc = torch.cat([torch.sin(ang), torch.cos(ang)], dim=-1)
    if d % 2:
        enc = torch.cat([enc, torch.zeros(enc.shape[:-1] + (1,), dtype=enc.dtype)], dim=-1)
    return enc


class ReactionDenoiser(nn.Module):
    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        self.cfg = cfg.validate()
        d, D = cfg.d, cfg.feature_dim
        self.in_x = nn.Linear(D, d)
        self.in_y = nn.Linear(D, d)
        self.fuse = nn.Linear(2 * d, d)
        self.register_buffer("pos_enc", sinusoidal_encoding(torch.arange(cfg.max_len), d).float(),
                             persistent=False)
        self.time_mlp = nn.Sequential(nn.Linear(d, d), nn.SiLU(), nn.Linear(d, d))
        if cfg.constrained:
            # row num_classes is the learned null (dropped-label) embedding
            self.label_embed = nn.Embedding(cfg.num_classes + 1, d)
        if cfg.arch == "decoder":
            layer = nn.TransformerDecoderLayer(d, cfg.heads, cfg.ffn_width, cfg.dropout, activation="gelu",
                                               batch_first=True, norm_first=True)
            self.backbone = nn.TransformerDecoder(layer, cfg.layers, norm=nn.LayerNorm(d))
        else:
            layer = nn.TransformerEncoderLayer(d, cfg.heads, cfg.ffn_width, cfg.dropout, activation="gelu",
                                               batch_first=True, norm_first=True)
            self.backbone = nn.TransformerEncoder(layer, cfg.layers, norm=nn.LayerNorm(d),
                                                  enable_nested_tensor=False)
        self.out = nn.Linear(d, D)

    def build_tokens(self, x_t: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        if x_t.shape != y.shape:
            raise ShapeMismatch(f"x_t {tuple(x_t.shape)} and y {tuple(y.shape)} differ")
        if x_t.shape[-1] != self.cfg.feature_dim:
            raise ShapeMismatch(f"feature width {x_t.shape[-1]} != {self.cfg.feature_dim}")
        n = x_t.shape[-2]
        if n > self.cfg.max_len:
            raise ShapeMismatch(f"{n} frames exceed max_len={self.cfg.max_len}")
        z = self.fuse(torch.cat([self.in_x(x_t), self.in_y(y)], dim=-1))
        return z + self.pos_enc[:n].to(z.dtype)

    def cond_token(self, t, a=None, batch: int | None = None) -> torch.Tensor:
        dtype = self.out.weight.dtype
        t = torch.as_tensor(t)
        if t.ndim == 0:
            t = t.expand(batch or 1)
        emb = self.time_mlp(sinusoidal_encoding(t, self.cfg.d).to(dtype))
        if self.cfg.constrained:
            if a is None:
                a = torch.full(t.shape, NULL_LABEL)
            a = torch.as_tensor(a).long()
            if a.ndim == 0:
                a = a.expand(t.shape)
            if bool(((a < NULL_LABEL) | (a >= self.cfg.num_classes)).any()):
                raise LabelOutOfRange(f"labels must lie in [0, {self.cfg.num_classes}) or be NULL_LABEL")
            emb = emb + self.label_embed(torch.where(a == NULL_LABEL, self.cfg.num_classes, a))
        return emb

    def forward(self, x_t: torch.Tensor, y: torch.Tensor, t, a=None) -> torch.Tensor:
        squeeze = x_t.ndim == 2
        if squeeze:
            x_t, y = x_t[None], y[None]
            if a is not None and torch.as_tensor(a).ndim == 0:
                a = torch.as_tensor(a)[None]
        tokens = self.build_tokens(x_t, y)
        cond = self.cond_token(t, a, batch=tokens.shape[0])
        if cond.shape[0] != tokens.shape[0]:
            raise ShapeMismatch("timestep/label batch does not match the input batch")
        n = tokens.shape[1]
        if self.cfg.arch == "decoder":
            blocked = ~directional_mask(n, self.cfg.mode)
            h = self.backbone(tokens, cond[:, None], tgt_mask=blocked if self.cfg.mode == "online" else None)
        else:
            h = self.backbone(torch.cat([cond[:, None], tokens], dim=1))[:, 1:]
        out = self.out(h)
        return out[0] if squeeze else out


def build_denoiser(cfg: DenoiserConfig) -> ReactionDenoiser:
    return ReactionDenoiser(cfg)


def build_offline_encoder(cfg: DenoiserConfig) -> ReactionDenoiser:
    """Encoder-only variant: condition token prepended, no attention mask."""
    if cfg.mode != "offline":
        raise ConfigError("the encoder variant is only defined for mode=offline")
    return ReactionDenoiser(replace(cfg, arch="encoder"))


def parameter_count(cfg: DenoiserConfig) -> int:
    """Closed-form trainable parameter count for ``cfg``."""
    d, D, f, L = cfg.d, cfg.feature_dim, cfg.ffn_width, cfg.layers
    n = 2 * (D * d + d) + (2 * d * d + d)  # input projections + fuse
    n += 2 * (d * d + d)  # timestep MLP
    if cfg.constrained:
        n += (cfg.num_classes + 1) * d
    attn = 4 * d * d + 4 * d
    ffn = 2 * d * f + f + d
    if cfg.arch == "decoder":
        n += L * (2 * attn + ffn + 3 * 2 * d)
    else:
        n += L * (attn + ffn + 2 * 2 * d)
    n += 2 * d  # final norm
    n += d * D + D  # output projection
    return n


def save_checkpoint(path, model: ReactionDenoiser, diffusion_steps: int, skeleton: Skeleton,
                    extra: dict | None = None):
    torch.save(
        {
            "format": CHECKPOINT_FORMAT,
            "config": model.cfg.to_dict(),
            "diffusion_steps": int(diffusion_steps),
            "skeleton": skeleton.to_dict(),
            "state_dict": model.state_dict(),
            "extra": extra or {},
        },
        Path(path),
    )


def load_checkpoint(path):
    """Return ``(model, diffusion_steps, skeleton, extra)``; rejects config/weight mismatches."""
    try:
        blob = torch.load(Path(path), map_location="cpu", weights_only=True)
    except FileNotFoundError:
        raise
    except Exception as e:
        raise CheckpointError(f"{path}: unreadable checkpoint ({type(e).__name__})") from None
    if not isinstance(blob, dict) or blob.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    try:
        cfg = DenoiserConfig.from_dict(blob["config"])
        model = ReactionDenoiser(cfg)
        model.load_state_dict(blob["state_dict"], strict=True)
        skeleton = Skeleton.from_dict(blob["skeleton"])
    except (KeyError, TypeError, ConfigError, RuntimeError) as e:
        raise CheckpointError(f"{path}: checkpoint does not match its config ({e})") from None
    if skeleton.feature_dim != cfg.feature_dim:
        raise CheckpointError(f"{path}: skeleton feature width {skeleton.feature_dim} != {cfg.feature_dim}")
    model.eval()
    return model, int(blob["diffusion_steps"]), skeleton, blob.get("extra", {})
