"""Procedural action-reaction pairs with a known, causal reaction rule.

Each class fixes an actor waveform (joint-angle sinusoid frequency, amplitude
and rotation axes) and a root path (approach, retreat or circle).  The
reactor follows the actor with a delay: its target pose is a damped, sign
flipped, axis-rolled copy of the actor pose ``delay`` frames earlier, and it
steps toward a spot at a fixed distance from the actor while turning to face
it.  Targets are tracked with first-order smoothing, so reactor frame ``i``
only reads actor frames ``<= i - delay``.

At ``noise <= 0.05`` the classes are separable by their waveform frequency;
the extractor tests use ``noise = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .motion import InteractionPair, MotionSequence
from .rotations import Skeleton, default_skeleton

PATH_KINDS = ("approach", "retreat", "circle")
PELVIS_HEIGHT = 0.9
REACT_DISTANCE = 1.2
REST_POSITION = (REACT_DISTANCE, 0.0, PELVIS_HEIGHT)


@dataclass(frozen=True)
class SynthConfig:
    classes: int = 4
    pairs_per_class: int = 50
    frames: int = 60
    skeleton: Skeleton = field(default_factory=default_skeleton)
    delay: int = 5
    noise: float = 0.0
    seed: int = 0
    fps: float = 20.0
    smoothing: float = 0.35
    pose_gain: float = 0.6

    def validate(self):
        if self.classes < 2:
            raise ConfigError("classes must be >= 2")
        if self.pairs_per_class < 1:
            raise ConfigError("pairs_per_class must be >= 1")
        if self.delay < 1:
            raise ConfigError("delay must be >= 1")
        if self.frames <= self.delay:
            raise ConfigError("frames must exceed delay")
        if self.noise < 0:
            raise ConfigError("noise must be >= 0")
        if not 0 < self.smoothing <= 1:
            raise ConfigError("smoothing must lie in (0, 1]")
        if self.fps <= 0:
            raise ConfigError("fps must be positive")


def class_name(c: int) -> str:
    return f"{PATH_KINDS[c % 3]}-{c}"


def actor_motion(c: int, k: int, frames: int, fps: float, rng: np.random.Generator) -> MotionSequence:
    t = np.arange(frames) / fps
    freq = 0.4 + 0.3 * c
    amp = (0.5 + 0.1 * (c % 3)) * rng.uniform(0.8, 1.2)
    phase = rng.uniform(0, 2 * np.pi)
    start = rng.uniform(-0.2, 0.2, size=2)

    pose = np.zeros((frames, k, 3))
    for j in range(k):
        gain = 0.3 if j == 0 else 1.0
        pose[:, j, (j + c) % 3] = gain * amp * np.sin(2 * np.pi * freq * t + phase + 0.7 * j)

    speed = 1.0 + 0.5 * (c // 3)
    kind = PATH_KINDS[c % 3]
    transl = np.zeros((frames, 3))
    transl[:, 2] = PELVIS_HEIGHT
    yaw = 0.15 * np.sin(2 * np.pi * 0.5 * freq * t + phase)
    if kind == "approach":
        transl[:, 0] = -1.0 + start[0] + 0.25 * speed * t
        transl[:, 1] = start[1]
    elif kind == "retreat":
        transl[:, 0] = -0.6 + start[0] - 0.2 * speed * t
        transl[:, 1] = start[1]
    else:
        ang = np.pi + 0.5 * speed * t
        radius = 1.0 + start[0]
        transl[:, 0] = radius * np.cos(ang)
        transl[:, 1] = radius * np.sin(ang) + start[1]
        yaw = yaw + ang - np.pi  # keep facing the circle center
    root = np.zeros((frames, 3))
    root[:, 2] = yaw
    return MotionSequence(pose.reshape(frames, 3 * k), root, transl, fps)


def reaction_rule(actor: MotionSequence, delay: int, smoothing: float = 0.35,
                  pose_gain: float = 0.6) -> MotionSequence:
    """Deterministic reactor motion; frame i reads actor frames <= i - delay only."""
    n, k = actor.frames, actor.joints
    a_pose = actor.pose.reshape(n, k, 3)
    pose = np.zeros((n, k, 3))
    transl = np.zeros((n, 3))
    yaw = np.zeros(n)

    cur_pose = np.zeros((k, 3))
    cur_pos = np.array(REST_POSITION)
    cur_yaw = np.pi
    for i in range(n):
        src = i - delay
        if src >= 0:
            target_pose = -pose_gain * np.roll(a_pose[src], 1, axis=-1)
            a_pos = actor.transl[src]
            away = cur_pos[:2] - a_pos[:2]
            away /= max(np.linalg.norm(away), 1e-6)
            target_pos = np.array([*(a_pos[:2] + REACT_DISTANCE * away), PELVIS_HEIGHT])
            face = np.arctan2(-away[1], -away[0])
            face = cur_yaw + (face - cur_yaw + np.pi) % (2 * np.pi) - np.pi  # nearest-angle unwrap
            cur_pose = cur_pose + smoothing * (target_pose - cur_pose)
            cur_pos = cur_pos + smoothing * (target_pos - cur_pos)
            cur_yaw = cur_yaw + smoothing * (face - cur_yaw)
        pose[i], transl[i], yaw[i] = cur_pose, cur_pos, cur_yaw

    root = np.zeros((n, 3))
    root[:, 2] = yaw
    return MotionSequence(pose.reshape(n, 3 * k), root, transl, actor.fps)


def synth_pair_dataset(cfg: SynthConfig) -> list[InteractionPair]:
    """Class-major list of ``classes * pairs_per_class`` pairs, deterministic in ``cfg.seed``."""
    cfg.validate()
    k = cfg.skeleton.joint_count
    out = []
    for c in range(cfg.classes):
        for p in range(cfg.pairs_per_class):
            rng = np.random.default_rng([cfg.seed, c, p])
            actor = actor_motion(c, k, cfg.frames, cfg.fps, rng)
            reactor = reaction_rule(actor, cfg.delay, cfg.smoothing, cfg.pose_gain)
            if cfg.noise > 0:
                reactor = MotionSequence(
                    reactor.pose + cfg.noise * rng.standard_normal(reactor.pose.shape),
                    reactor.root_orient + cfg.noise * rng.standard_normal(reactor.root_orient.shape),
                    reactor.transl + cfg.noise * rng.standard_normal(reactor.transl.shape),
                    cfg.fps,
                )
            out.append(InteractionPair(actor, reactor, c, class_name(c)))
    return out
