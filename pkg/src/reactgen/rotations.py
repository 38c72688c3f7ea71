"""Rotation representations and forward kinematics over a rigid joint tree.

The 6D representation stores the first two columns of a rotation matrix,
column-major: ``[m00, m10, m20, m01, m11, m21]``.  Torch functions here are
differentiable and dtype-preserving so they can sit inside training losses.
Axis-angle conversions are numpy-side plumbing for file IO.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
import torch
from scipy.spatial.transform import Rotation

from .errors import ConfigError, DegenerateRotation, InvalidRotation, ShapeMismatch

EPS = 1e-8

__all__ = [
    "Skeleton",
    "load_skeleton",
    "default_skeleton",
    "sixd_to_matrix",
    "matrix_to_sixd",
    "axis_angle_to_matrix",
    "matrix_to_axis_angle",
    "forward_kinematics",
    "relative_orientation",
    "to_matrix",
]


def sixd_to_matrix(r, check: bool = True) -> torch.Tensor:
    """Gram-Schmidt a (..., 6) tensor into (..., 3, 3) rotation matrices.

    With ``check=False`` degenerate inputs are clamped instead of raising,
    which is what the training losses want for raw network outputs.
    """
    r = torch.as_tensor(r)
    if not r.is_floating_point():
        r = r.double()
    if r.shape[-1] != 6:
        raise ShapeMismatch(f"6D rotation needs a trailing dim of 6, got {tuple(r.shape)}")
    a1, a2 = r[..., :3], r[..., 3:]
    n1 = torch.linalg.norm(a1, dim=-1, keepdim=True)
    if check and bool((n1 < EPS).any()):
        raise DegenerateRotation("first 6D column has near-zero norm")
    b1 = a1 / n1.clamp_min(EPS)
    u2 = a2 - (b1 * a2).sum(-1, keepdim=True) * b1
    n2 = torch.linalg.norm(u2, dim=-1, keepdim=True)
    if check and bool((n2 < EPS).any()):
        raise DegenerateRotation("6D columns are parallel or the second is near zero")
    b2 = u2 / n2.clamp_min(EPS)
    b3 = torch.linalg.cross(b1, b2, dim=-1)
    return torch.stack((b1, b2, b3), dim=-1)


def matrix_to_sixd(m, check: bool = True, tol: float = 1e-5) -> torch.Tensor:
    m = torch.as_tensor(m)
    if not m.is_floating_point():
        m = m.double()
    if m.shape[-2:] != (3, 3):
        raise ShapeMismatch(f"expected (..., 3, 3), got {tuple(m.shape)}")
    if check:
        eye = torch.eye(3, dtype=m.dtype)
        resid = (m.transpose(-1, -2) @ m - eye).abs().amax() if m.numel() else 0.0
        if float(resid) > tol:
            raise InvalidRotation(f"matrix is not orthonormal (residual {float(resid):.3g})")
    return torch.cat((m[..., :, 0], m[..., :, 1]), dim=-1)


def axis_angle_to_matrix(v) -> np.ndarray:
    """Rodrigues map for (..., 3) rotation vectors; zero maps to identity."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != 3:
        raise ShapeMismatch(f"axis-angle needs a trailing dim of 3, got {v.shape}")
    flat = np.array(v.reshape(-1, 3))
    mats = Rotation.from_rotvec(flat).as_matrix() if len(flat) else np.zeros((0, 3, 3))
    return mats.reshape(v.shape[:-1] + (3, 3))


def matrix_to_axis_angle(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.shape[-2:] != (3, 3):
        raise ShapeMismatch(f"expected (..., 3, 3), got {m.shape}")
    flat = np.array(m.reshape(-1, 3, 3))
    vecs = Rotation.from_matrix(flat).as_rotvec() if len(flat) else np.zeros((0, 3))
    return vecs.reshape(m.shape[:-2] + (3,))


def to_matrix(rot, rep: str = "matrix") -> torch.Tensor:
    """Convert a rotation in any supported representation to (..., 3, 3)."""
    if rep == "matrix":
        m = torch.as_tensor(rot)
        return m if m.is_floating_point() else m.double()
    if rep == "sixd":
        return sixd_to_matrix(rot)
    if rep == "axis_angle":
        return torch.from_numpy(axis_angle_to_matrix(rot))
    raise ValueError(f"unknown rotation representation {rep!r}")


def relative_orientation(q_y, q_x, rep: str = "matrix") -> torch.Tensor:
    """RM(q_y)^T @ RM(q_x): orientation of x expressed in y's frame."""
    return to_matrix(q_y, rep).transpose(-1, -2) @ to_matrix(q_x, rep)


@dataclass(frozen=True, eq=False)
class Skeleton:
    """Rigid joint tree. Joint 0 is the root; ``parents[0] == -1``."""

    name: str
    parents: tuple
    offsets: np.ndarray  # (K, 3) bone offsets in the parent frame, meters

    def __post_init__(self):
        parents = tuple(int(p) for p in self.parents)
        offsets = np.asarray(self.offsets, dtype=np.float64)
        object.__setattr__(self, "parents", parents)
        object.__setattr__(self, "offsets", offsets)
        k = len(parents)
        if k < 1:
            raise ConfigError("skeleton needs at least one joint")
        if parents[0] != -1:
            raise ConfigError("joint 0 must be the root (parent -1)")
        for j, p in enumerate(parents[1:], start=1):
            if not 0 <= p < j:
                raise ConfigError(f"joint {j} has parent {p}; parents must precede children")
        if offsets.shape != (k, 3):
            raise ConfigError(f"offsets must have shape ({k}, 3), got {offsets.shape}")
        offsets.setflags(write=False)

    @property
    def joint_count(self) -> int:
        return len(self.parents)

    @property
    def feature_dim(self) -> int:
        return 6 * self.joint_count + 9

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "joint_count": self.joint_count,
            "parents": list(self.parents),
            "offsets": self.offsets.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Skeleton":
        try:
            skel = cls(d["name"], d["parents"], d["offsets"])
        except KeyError as e:
            raise ConfigError(f"skeleton config missing field {e}") from None
        if "joint_count" in d and int(d["joint_count"]) != skel.joint_count:
            raise ConfigError("joint_count disagrees with the parents list")
        return skel

    def __eq__(self, other):
        return (
            isinstance(other, Skeleton)
            and self.parents == other.parents
            and np.array_equal(self.offsets, other.offsets)
        )

    def __hash__(self):
        return hash((self.parents, self.offsets.tobytes()))


def load_skeleton(path_or_name) -> Skeleton:
    """Load a skeleton JSON by path, or a bundled config by name."""
    p = Path(str(path_or_name))
    if p.suffix == ".json" and p.exists():
        text = p.read_text()
    else:
        res = resources.files("reactgen.skeletons") / f"{path_or_name}.json"
        if not res.is_file():
            raise ConfigError(f"no skeleton file or bundled config named {path_or_name!r}")
        text = res.read_text()
    return Skeleton.from_dict(json.loads(text))


def default_skeleton() -> Skeleton:
    return load_skeleton("desk5")


def forward_kinematics(skel: Skeleton, pose, root_orient, root_transl) -> torch.Tensor:
    """World joint positions (..., K, 3).

    ``pose`` holds per-joint local rotation matrices (..., K, 3, 3); the root's
    global rotation is ``root_orient @ pose[0]`` and the root sits at
    ``root_transl`` (its own offset is ignored).
    """
    pose = torch.as_tensor(pose)
    root_orient = torch.as_tensor(root_orient, dtype=pose.dtype)
    root_transl = torch.as_tensor(root_transl, dtype=pose.dtype)
    k = skel.joint_count
    if pose.shape[-3:] != (k, 3, 3):
        raise ShapeMismatch(f"pose must be (..., {k}, 3, 3), got {tuple(pose.shape)}")
    offsets = torch.tensor(skel.offsets, dtype=pose.dtype)
    rots = [root_orient @ pose[..., 0, :, :]]
    pos = [root_transl.expand(pose.shape[:-3] + (3,))]
    for j in range(1, k):
        p = skel.parents[j]
        pos.append(pos[p] + rots[p] @ offsets[j])
        rots.append(rots[p] @ pose[..., j, :, :])
    return torch.stack(pos, dim=-2)
