"""Denoising and interaction losses on (..., N, 6K + 9) feature tensors.

Everything here is differentiable torch so the same code serves training
and the finite-difference gradient checks.
"""

from __future__ import annotations

from typing import NamedTuple

import torch

from .errors import ShapeMismatch
from .rotations import Skeleton, forward_kinematics, sixd_to_matrix


class RelativeRep(NamedTuple):
    joint_delta: torch.Tensor  # (..., N, K, 3) world-frame joint offsets y - x
    orient_rel: torch.Tensor  # (..., N, 3, 3) R_y^T R_x
    transl_delta: torch.Tensor  # (..., N, 3)


def split_features(f: torch.Tensor, k: int):
    """-> (local 6D (..., K, 6), root 6D (..., 6), translation (..., 3))."""
    if f.shape[-1] != 6 * k + 9:
        raise ShapeMismatch(f"feature width {f.shape[-1]} != 6*{k}+9")
    return f[..., : 6 * k].unflatten(-1, (k, 6)), f[..., 6 * k: 6 * k + 6], f[..., 6 * k + 6:]


def world_state(f: torch.Tensor, skel: Skeleton):
    """World joint positions, root rotation matrix and translation of a feature tensor."""
    pose6, root6, transl = split_features(f, skel.joint_count)
    local = sixd_to_matrix(pose6, check=False)
    root = sixd_to_matrix(root6, check=False)
    return forward_kinematics(skel, local, root, transl), root, transl


def relative_rep(x: torch.Tensor, y: torch.Tensor, skel: Skeleton) -> RelativeRep:
    """Representation of person ``y`` relative to person ``x``, frame by frame."""
    if x.shape != y.shape:
        raise ShapeMismatch(f"persons differ in shape: {tuple(x.shape)} vs {tuple(y.shape)}")
    pos_x, rot_x, tr_x = world_state(x, skel)
    pos_y, rot_y, tr_y = world_state(y, skel)
    return RelativeRep(pos_y - pos_x, rot_y.transpose(-1, -2) @ rot_x, tr_y - tr_x)


def _masked_mean(per_item: torch.Tensor, mask, width: int = 1) -> torch.Tensor:
    # per_item: (..., N) sums over the trailing feature axes; mask: (..., N) bool
    if mask is None:
        return per_item.mean() / width
    m = torch.as_tensor(mask, dtype=per_item.dtype).expand_as(per_item)
    return (per_item * m).sum() / (m.sum().clamp_min(1) * width)


def loss_dm(x0: torch.Tensor, x0_hat: torch.Tensor, mask=None) -> torch.Tensor:
    """Mean squared error over all (valid) entries."""
    if x0.shape != x0_hat.shape:
        raise ShapeMismatch(f"x0 {tuple(x0.shape)} vs x0_hat {tuple(x0_hat.shape)}")
    return _masked_mean(((x0_hat - x0) ** 2).sum(-1), mask, x0.shape[-1])


def loss_inter(x0: torch.Tensor, x0_hat: torch.Tensor, y: torch.Tensor, skel: Skeleton,
               mask=None) -> torch.Tensor:
    """Per-frame squared mismatch of the actor-relative representations, averaged over frames."""
    if not (x0.shape == x0_hat.shape == y.shape):
        raise ShapeMismatch("x0, x0_hat and y must share a shape")
    ref = relative_rep(x0, y, skel)
    hat = relative_rep(x0_hat, y, skel)
    per_frame = (
        ((hat.joint_delta - ref.joint_delta) ** 2).sum((-1, -2))
        + ((hat.orient_rel - ref.orient_rel) ** 2).sum((-1, -2))
        + ((hat.transl_delta - ref.transl_delta) ** 2).sum(-1)
    )
    return _masked_mean(per_frame, mask)
