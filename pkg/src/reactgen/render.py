"""Static stick-figure export: one orthographic PNG per frame."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image, ImageDraw

from .errors import ConfigError, ShapeMismatch
from .motion import InteractionPair, MotionSequence
from .rotations import Skeleton, axis_angle_to_matrix, forward_kinematics

AXES = {"xy": (0, 1), "xz": (0, 2), "yz": (1, 2)}
ACTOR_COLOR = (40, 90, 220)
REACTOR_COLOR = (220, 60, 40)
BACKGROUND = (255, 255, 255)
MARGIN = 16
JOINT_RADIUS = 3


def world_joints(seq: MotionSequence, skel: Skeleton) -> np.ndarray:
    """(N, K, 3) world joint positions of an axis-angle sequence."""
    if seq.joints != skel.joint_count:
        raise ShapeMismatch(f"sequence has {seq.joints} joints, skeleton {skel.name} has {skel.joint_count}")
    n, k = seq.frames, seq.joints
    local = torch.from_numpy(axis_angle_to_matrix(seq.pose.reshape(n, k, 3)))
    root = torch.from_numpy(axis_angle_to_matrix(seq.root_orient))
    return forward_kinematics(skel, local, root, torch.tensor(seq.transl)).numpy()


def canvas_transform(points: np.ndarray, size: int, axis: str):
    """Map (..., 3) world points to pixel (col, row) for the chosen view plane.

    The bounding box of ``points`` in the plane is scaled uniformly to fit
    inside the margin and centred; the second plane axis points up.
    """
    if axis not in AXES:
        raise ConfigError(f"axis must be one of {sorted(AXES)}, got {axis!r}")
    a, b = AXES[axis]
    flat = points.reshape(-1, 3)
    lo = flat[:, [a, b]].min(0)
    hi = flat[:, [a, b]].max(0)
    extent = max(float((hi - lo).max()), 1e-6)
    scale = (size - 1 - 2 * MARGIN) / extent
    pad = ((size - 1 - 2 * MARGIN) - (hi - lo) * scale) / 2

    def project(p):
        p = np.asarray(p, dtype=np.float64)
        col = MARGIN + pad[0] + (p[..., a] - lo[0]) * scale
        row = (size - 1) - (MARGIN + pad[1] + (p[..., b] - lo[1]) * scale)
        return np.stack([col, row], axis=-1)

    return project


def draw_frame(people, skel: Skeleton, project, size: int) -> Image.Image:
    img = Image.new("RGB", (size, size), BACKGROUND)
    draw = ImageDraw.Draw(img)
    for joints, color in people:
        px = project(joints)
        for j, p in enumerate(skel.parents):
            if p >= 0:
                draw.line([tuple(px[p]), tuple(px[j])], fill=color, width=2)
        for c, r in px:
            draw.ellipse([c - JOINT_RADIUS, r - JOINT_RADIUS, c + JOINT_RADIUS, r + JOINT_RADIUS], fill=color)
    return img


def render_motion(item, skel: Skeleton, out_dir, axis: str = "xz", size: int = 256) -> list[Path]:
    """Write ``frame_00000.png``... for a MotionSequence or InteractionPair; returns the paths."""
    if isinstance(item, InteractionPair):
        tracks = [(world_joints(item.action, skel), ACTOR_COLOR), (world_joints(item.reaction, skel), REACTOR_COLOR)]
    else:
        tracks = [(world_joints(item, skel), ACTOR_COLOR)]
    if size < 2 * MARGIN + 8:
        raise ConfigError(f"size must be at least {2 * MARGIN + 8}")
    project = canvas_transform(np.concatenate([t for t, _ in tracks], axis=1), size, axis)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(tracks[0][0].shape[0]):
        path = out / f"frame_{i:05d}.png"
        draw_frame([(t[i], c) for t, c in tracks], skel, project, size).save(path)
        paths.append(path)
    return paths
