"""Motion feature extractor and the four generation metrics.

The extractor is a spatio-temporal graph-convolutional classifier over a
two-person graph: two copies of the skeleton tree with no cross-person edges.
Each node carries the joint's 6D local rotation and its world position (the
root node's position is the root translation).  The pooled 256-d activation
before the linear classifier is the metric feature.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .diffusion import DiffusionSchedule
from .errors import (
    CheckpointError,
    ConfigError,
    DegenerateDataset,
    InsufficientSamples,
    LabelMismatch,
    NumericalError,
    ShapeMismatch,
)
from .generation import generate_features
from .losses import split_features, world_state
from .model import ReactionDenoiser
from .rotations import Skeleton

FID_SHRINK = 1e-6
EIG_CLIP = 1e-10
EXTRACTOR_FORMAT = "reactgen-extractor/1"
METRICS = ("fid", "accuracy", "diversity", "multimodality")

# full-scale extractor schedule (100 epochs, batch 64, lr 1e-4)
FULL_SCALE_EXTRACTOR = {"epochs": 100, "batch_size": 64, "lr": 1e-4}


# --- graph classifier ---------------------------------------------------------

def two_person_adjacency(skel: Skeleton) -> torch.Tensor:
    """Symmetrically normalized adjacency with self loops, (2K, 2K), block diagonal."""
    k = skel.joint_count
    a = np.eye(2 * k)
    for off in (0, k):
        for j, p in enumerate(skel.parents):
            if p >= 0:
                a[off + j, off + p] = a[off + p, off + j] = 1.0
    d = 1.0 / np.sqrt(a.sum(1))
    return torch.tensor(a * d[:, None] * d[None, :], dtype=torch.float32)


def node_features(x: torch.Tensor, y: torch.Tensor, skel: Skeleton) -> torch.Tensor:
    """(B, N, D) reactor and actor features -> (B, 9, N, 2K) graph input, actor nodes first."""
    parts = []
    for f in (y, x):
        local6, _, _ = split_features(f, skel.joint_count)
        pos, _, _ = world_state(f, skel)
        parts.append(torch.cat([local6, pos], dim=-1))
    return torch.cat(parts, dim=-2).permute(0, 3, 1, 2).contiguous()


class GraphTemporalBlock(nn.Module):
    def __init__(self, c_in, c_out, adj, kernel=9, stride=1):
        super().__init__()
        self.register_buffer("adj", adj.clone(), persistent=False)
        self.spatial = nn.Conv2d(c_in, c_out, 1)
        self.bn1 = nn.BatchNorm2d(c_out)
        self.temporal = nn.Conv2d(c_out, c_out, (kernel, 1), (stride, 1), (kernel // 2, 0))
        self.bn2 = nn.BatchNorm2d(c_out)
        if c_in == c_out and stride == 1:
            self.residual = nn.Identity()
        else:
            self.residual = nn.Sequential(nn.Conv2d(c_in, c_out, 1, (stride, 1)), nn.BatchNorm2d(c_out))
        self.act = nn.ReLU()

    def forward(self, h):
        z = torch.einsum("nctv,vw->nctw", self.spatial(h), self.adj)
        z = self.act(self.bn1(z))
        z = self.bn2(self.temporal(z))
        return self.act(z + self.residual(h))


class MotionFeatureExtractor(nn.Module):
    def __init__(self, skel: Skeleton, num_classes: int, channels=(64, 64, 128, 256), kernel: int = 9,
                 class_names=None):
        super().__init__()
        if num_classes < 2:
            raise ConfigError("the extractor needs at least 2 classes")
        self.skel = skel
        self.num_classes = num_classes
        self.channels = tuple(channels)
        self.kernel = kernel
        self.class_names = list(class_names) if class_names is not None else [str(c) for c in range(num_classes)]
        adj = two_person_adjacency(skel)
        v = adj.shape[0]
        self.data_bn = nn.BatchNorm1d(9 * v)
        blocks, c_prev = [], 9
        for c in channels:
            blocks.append(GraphTemporalBlock(c_prev, c, adj, kernel, stride=2 if c > c_prev and c_prev != 9 else 1))
            c_prev = c
        self.blocks = nn.Sequential(*blocks)
        self.fc = nn.Linear(c_prev, num_classes)

    @property
    def feature_dim(self) -> int:
        return self.channels[-1]

    def embed(self, x, y) -> torch.Tensor:
        h = node_features(x.float(), y.float(), self.skel)
        b, c, t, v = h.shape
        h = self.data_bn(h.permute(0, 3, 1, 2).reshape(b, v * c, t)).reshape(b, v, c, t).permute(0, 2, 3, 1)
        return self.blocks(h).mean(dim=(2, 3))

    def forward(self, x, y) -> torch.Tensor:
        return self.fc(self.embed(x, y))

    @torch.no_grad()
    def features(self, x, y, batch_size: int = 256) -> np.ndarray:
        self.eval()
        out = [self.embed(x[i:i + batch_size], y[i:i + batch_size]) for i in range(0, len(x), batch_size)]
        return torch.cat(out).double().numpy()

    @torch.no_grad()
    def predict(self, x, y, batch_size: int = 256) -> np.ndarray:
        self.eval()
        out = [self(x[i:i + batch_size], y[i:i + batch_size]).argmax(-1) for i in range(0, len(x), batch_size)]
        return torch.cat(out).numpy()


def train_feature_extractor(train_x, train_y, train_labels, skel: Skeleton, num_classes: int | None = None,
                            epochs: int = 30, batch_size: int = 32, lr: float = 1e-3, seed: int = 0,
                            held_out=None, class_names=None, log=None):
    """Fit the classifier; returns ``(extractor, held-out accuracy or None)``.

    ``held_out`` is an optional ``(x, y, labels)`` triple.
    """
    labels = torch.as_tensor(train_labels, dtype=torch.long)
    classes, counts = torch.unique(labels, return_counts=True)
    if len(classes) < 2:
        raise DegenerateDataset("the extractor needs labeled clips from at least 2 classes")
    if int(counts.min()) < 2:
        raise DegenerateDataset(f"class {int(classes[counts.argmin()])} has fewer than 2 clips")
    num_classes = num_classes or int(classes.max()) + 1
    torch.manual_seed(seed)
    net = MotionFeatureExtractor(skel, num_classes, class_names=class_names)
    opt = torch.optim.Adam(net.parameters(), lr=lr)
    gen = torch.Generator().manual_seed(seed)
    x, y = torch.as_tensor(train_x).float(), torch.as_tensor(train_y).float()
    m = len(labels)
    for epoch in range(epochs):
        net.train()
        perm = torch.randperm(m, generator=gen)
        total = 0.0
        for i in range(0, m, batch_size):
            idx = perm[i:i + batch_size]
            if len(idx) < 2:
                continue
            loss = nn.functional.cross_entropy(net(x[idx], y[idx]), labels[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.detach()) * len(idx)
        if log is not None:
            log(f"epoch={epoch + 1} loss={total / m:.4f}")
    net.eval()
    acc = None
    if held_out is not None:
        hx, hy, hl = held_out
        acc = recognition_accuracy(net, torch.as_tensor(hx).float(), torch.as_tensor(hy).float(), hl)
    return net, acc


def save_extractor(net: MotionFeatureExtractor, path, extra: dict | None = None):
    torch.save({"format": EXTRACTOR_FORMAT, "skeleton": net.skel.to_dict(), "num_classes": net.num_classes,
                "channels": list(net.channels), "kernel": net.kernel, "class_names": net.class_names,
                "state_dict": net.state_dict(), "extra": extra or {}}, Path(path))


def load_extractor(path):
    try:
        blob = torch.load(Path(path), map_location="cpu", weights_only=True)
    except FileNotFoundError:
        raise
    except Exception as e:
        raise CheckpointError(f"{path}: unreadable extractor ({type(e).__name__})") from None
    if not isinstance(blob, dict) or blob.get("format") != EXTRACTOR_FORMAT:
        raise CheckpointError(f"{path}: not a {EXTRACTOR_FORMAT} file")
    try:
        net = MotionFeatureExtractor(Skeleton.from_dict(blob["skeleton"]), blob["num_classes"], blob["channels"],
                                     blob["kernel"], blob["class_names"])
        net.load_state_dict(blob["state_dict"], strict=True)
    except (KeyError, TypeError, ConfigError, RuntimeError) as e:
        raise CheckpointError(f"{path}: extractor does not match its config ({e})") from None
    return net.eval(), blob.get("extra", {})


# --- metrics ----------------------------------------------------------------------

@dataclass
class FeatureSet:
    vectors: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2:
            raise ShapeMismatch("feature vectors must be (M, F)")
        if not np.isfinite(self.vectors).all():
            raise NumericalError("feature set has non-finite entries")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)

    def by_class(self) -> dict[int, np.ndarray]:
        return {int(c): self.vectors[self.labels == c] for c in np.unique(self.labels)}


def _psd_sqrt(s: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((s + s.T) / 2)
    w = np.where(np.abs(w) < EIG_CLIP, 0.0, w)
    if (w < 0).any():
        w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.T


def fid(a, b, shrink: float = FID_SHRINK) -> float:
    """Frechet distance between Gaussian fits of two feature sets."""
    a = a.vectors if isinstance(a, FeatureSet) else np.asarray(a, dtype=np.float64)
    b = b.vectors if isinstance(b, FeatureSet) else np.asarray(b, dtype=np.float64)
    if a.shape[1] != b.shape[1]:
        raise ShapeMismatch(f"feature widths differ: {a.shape[1]} vs {b.shape[1]}")
    if len(a) < 2 or len(b) < 2:
        raise InsufficientSamples("fid needs at least 2 vectors per set")
    f = a.shape[1]
    mu = a.mean(0) - b.mean(0)
    ca = np.cov(a, rowvar=False).reshape(f, f) + shrink * np.eye(f)
    cb = np.cov(b, rowvar=False).reshape(f, f) + shrink * np.eye(f)
    # tr sqrt(ca cb) = tr sqrt(S cb S) with S = sqrt(ca), and S cb S is symmetric PSD
    s = _psd_sqrt(ca)
    m = s @ cb @ s
    w = np.linalg.eigvalsh((m + m.T) / 2)
    if not np.isfinite(w).all():
        raise NumericalError("covariance square root failed")
    tr_sqrt = np.sqrt(np.clip(w, 0.0, None)).sum()
    out = float(mu @ mu + np.trace(ca) + np.trace(cb) - 2 * tr_sqrt)
    if not math.isfinite(out):
        raise NumericalError("fid is not finite")
    return max(out, 0.0)


def diversity(feats, s_d: int, seed: int = 0) -> float:
    v = feats.vectors if isinstance(feats, FeatureSet) else np.asarray(feats, dtype=np.float64)
    if s_d < 1 or len(v) < 2 * s_d:
        raise InsufficientSamples(f"diversity needs {2 * s_d} vectors, got {len(v)}")
    perm = np.random.default_rng(seed).permutation(len(v))
    return float(np.linalg.norm(v[perm[:s_d]] - v[perm[s_d:2 * s_d]], axis=1).mean())


def multimodality(feats_by_class: dict, s_l: int, seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    dists = []
    for c in sorted(feats_by_class):
        v = np.asarray(feats_by_class[c], dtype=np.float64)
        if len(v) < 2 * s_l:
            raise InsufficientSamples(f"class {c} has {len(v)} samples, multimodality needs {2 * s_l}")
        perm = rng.permutation(len(v))
        dists.append(np.linalg.norm(v[perm[:s_l]] - v[perm[s_l:2 * s_l]], axis=1))
    if not dists:
        raise InsufficientSamples("no classes to evaluate")
    return float(np.concatenate(dists).mean())


def recognition_accuracy(extractor: MotionFeatureExtractor, x, y, labels) -> float:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= extractor.num_classes):
        raise LabelMismatch(f"labels outside the extractor's {extractor.num_classes} classes")
    if len(labels) != len(x):
        raise ShapeMismatch("one label per clip required")
    if len(labels) == 0:
        return 0.0
    return float((extractor.predict(x, y) == labels).mean())


# --- suite ------------------------------------------------------------------------

@dataclass(frozen=True)
class EvalConfig:
    repeats: int = 20
    samples_per_repeat: int = 1000
    s_d: int = 200
    s_l: int = 20
    seed: int = 0
    ddim_steps: int = 5
    guidance: float = 1.0
    batch_size: int = 256

    def validate(self) -> "EvalConfig":
        if self.repeats < 1 or self.samples_per_repeat < 2:
            raise ConfigError("repeats >= 1 and samples_per_repeat >= 2 required")
        if self.s_d > self.samples_per_repeat:
            raise ConfigError("S_d may not exceed samples_per_repeat")
        if self.s_l < 2:
            raise ConfigError("S_l must be >= 2")
        return self


@dataclass
class MetricReport:
    values: dict[str, list[float]]
    settings: dict = field(default_factory=dict)

    def summary(self, name: str) -> dict:
        v = np.asarray(self.values[name], dtype=np.float64)
        return {"mean": float(v.mean()), "ci95": float(1.96 * v.std() / math.sqrt(len(v))), "repeats": len(v)}

    def to_dict(self) -> dict:
        out = {m: self.summary(m) for m in self.values}
        out["settings"] = dict(self.settings)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "mean", "ci95", "repeats"])
        for m in self.values:
            s = self.summary(m)
            w.writerow([m, repr(s["mean"]), repr(s["ci95"]), s["repeats"]])
        return buf.getvalue()


def report_schema() -> dict:
    return json.loads(resources.files("reactgen").joinpath("report.schema.json").read_text())


def stratified_indices(labels: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` indices cycling over classes in sorted order, uniform within each class."""
    classes = np.unique(labels)
    pools = {c: np.flatnonzero(labels == c) for c in classes}
    picks = [rng.choice(pools[classes[i % len(classes)]]) for i in range(n)]
    return np.asarray(picks, dtype=np.int64)


def evaluate_suite(model: ReactionDenoiser | None, x, y, labels, extractor: MotionFeatureExtractor,
                   sched: DiffusionSchedule | None, cfg: EvalConfig, log=None) -> MetricReport:
    """Metric protocol on one split.

    ``x, y, labels`` are the split's real reactions, actors and labels.  Each
    repeat draws class-stratified actors, generates reactions (or, with
    ``model=None``, takes the real reactions as the "generated" set), and
    scores them against the split's real reaction features.
    """
    cfg.validate()
    x, y = torch.as_tensor(x).float(), torch.as_tensor(y).float()
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) < 2:
        raise InsufficientSamples("evaluation split needs at least 2 clips")
    real = FeatureSet(extractor.features(x, y), labels)
    n = cfg.samples_per_repeat
    n_classes = len(np.unique(labels))
    s_d = min(cfg.s_d, n // 2)
    s_l = min(cfg.s_l, (n // n_classes) // 2)
    if s_l < 1:
        raise InsufficientSamples(f"{n} samples over {n_classes} classes leave no multimodality pairs")
    values = {m: [] for m in METRICS}
    for r in range(cfg.repeats):
        seed = cfg.seed + r
        idx = stratified_indices(labels, n, np.random.default_rng(seed))
        ys, ls = y[idx], labels[idx]
        if model is None:
            xs = x[idx]
        else:
            chunks = []
            for j, i in enumerate(range(0, n, cfg.batch_size)):
                lab = torch.as_tensor(ls[i:i + cfg.batch_size]) if model.cfg.constrained else None
                chunks.append(generate_features(model, ys[i:i + cfg.batch_size], sched, cfg.ddim_steps,
                                                seed=seed * 100_003 + j, label=lab, guidance=cfg.guidance).float())
            xs = torch.cat(chunks)
        gen = FeatureSet(extractor.features(xs, ys), ls)
        values["fid"].append(fid(gen, real))
        values["accuracy"].append(recognition_accuracy(extractor, xs, ys, ls))
        values["diversity"].append(diversity(gen, s_d, seed))
        values["multimodality"].append(multimodality(gen.by_class(), s_l, seed))
        if log is not None:
            log(f"repeat={r} " + " ".join(f"{m}={values[m][-1]:.6g}" for m in METRICS))
    settings = {"repeats": cfg.repeats, "samples_per_repeat": n, "s_d": s_d, "s_l": s_l, "seed": cfg.seed,
                "ddim_steps": cfg.ddim_steps, "real_clips": int(len(labels))}
    return MetricReport(values, settings)
