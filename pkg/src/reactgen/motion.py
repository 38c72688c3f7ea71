"""Motion and pair containers, their JSON formats, windowing, and per-frame features.

Feature layout per frame (D = 6K + 9): 6D rotation of pose joints 0..K-1,
then 6D root orientation, then root translation.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .errors import (
    EmptySequence,
    FormatError,
    InvalidRole,
    ShapeMismatch,
    UnknownSequence,
)
from .rotations import axis_angle_to_matrix, matrix_to_axis_angle, matrix_to_sixd, sixd_to_matrix


@dataclass(frozen=True, eq=False)
class MotionSequence:
    """One person's motion: axis-angle pose (N, 3K), root_orient (N, 3), transl (N, 3)."""

    pose: np.ndarray
    root_orient: np.ndarray
    transl: np.ndarray
    fps: float = 20.0

    def __post_init__(self):
        for name in ("pose", "root_orient", "transl"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            if arr.ndim != 2:
                raise ShapeMismatch(f"{name} must be 2-D, got shape {arr.shape}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        n = self.pose.shape[0]
        if self.root_orient.shape != (n, 3) or self.transl.shape != (n, 3):
            raise ShapeMismatch("pose, root_orient and transl must share the frame count N")
        if self.pose.shape[1] % 3 or self.pose.shape[1] == 0:
            raise ShapeMismatch(f"pose width {self.pose.shape[1]} is not 3K")

    @property
    def frames(self) -> int:
        return self.pose.shape[0]

    @property
    def joints(self) -> int:
        return self.pose.shape[1] // 3

    def slice(self, start: int, stop: int) -> "MotionSequence":
        return replace(self, pose=self.pose[start:stop], root_orient=self.root_orient[start:stop],
                       transl=self.transl[start:stop])

    def to_dict(self) -> dict:
        return {
            "fps": float(self.fps),
            "frames": self.frames,
            "joints": self.joints,
            "rep": "axis_angle",
            "pose": self.pose.tolist(),
            "root_orient": self.root_orient.tolist(),
            "transl": self.transl.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MotionSequence":
        missing = [k for k in ("fps", "frames", "joints", "pose", "root_orient", "transl") if k not in d]
        if missing:
            raise FormatError(f"motion is missing field(s): {', '.join(missing)}")
        if d.get("rep", "axis_angle") != "axis_angle":
            raise FormatError(f"unsupported rotation rep {d['rep']!r}")
        n, k = int(d["frames"]), int(d["joints"])
        try:
            pose = np.asarray(d["pose"], dtype=np.float64)
            root = np.asarray(d["root_orient"], dtype=np.float64)
            transl = np.asarray(d["transl"], dtype=np.float64)
        except (TypeError, ValueError) as e:
            raise FormatError(f"motion arrays are ragged or non-numeric: {e}") from None
        if n < 1:
            raise FormatError("motion needs at least one frame")
        if pose.shape != (n, 3 * k):
            raise FormatError(f"pose shape {pose.shape} != ({n}, {3 * k})")
        if root.shape != (n, 3) or transl.shape != (n, 3):
            raise FormatError(f"root_orient/transl must be ({n}, 3)")
        return cls(pose, root, transl, float(d["fps"]))


@dataclass(frozen=True, eq=False)
class InteractionPair:
    """Actor motion (``action``) and the reactor's response (``reaction``)."""

    action: MotionSequence
    reaction: MotionSequence
    label: int | None = None
    label_name: str | None = None
    valid_length: int | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.action.frames != self.reaction.frames:
            raise ShapeMismatch(
                f"action has {self.action.frames} frames but reaction has {self.reaction.frames}"
            )
        if self.action.joints != self.reaction.joints:
            raise ShapeMismatch("action and reaction use different joint counts")
        if self.action.fps != self.reaction.fps:
            raise ShapeMismatch("action and reaction use different fps")
        if self.valid_length is None:
            object.__setattr__(self, "valid_length", self.action.frames)

    @property
    def frames(self) -> int:
        return self.action.frames

    def swapped(self) -> "InteractionPair":
        return replace(self, action=self.reaction, reaction=self.action)

    def to_dict(self) -> dict:
        return {
            "action": self.action.to_dict(),
            "reaction": self.reaction.to_dict(),
            "label": self.label,
            "label_name": self.label_name,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InteractionPair":
        for key in ("action", "reaction"):
            if key not in d:
                raise FormatError(f"pair is missing field {key!r}")
        label = d.get("label")
        return cls(
            MotionSequence.from_dict(d["action"]),
            MotionSequence.from_dict(d["reaction"]),
            None if label is None else int(label),
            d.get("label_name"),
        )


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: not valid JSON ({e})") from None


def _write_json(obj, path):
    Path(path).write_text(json.dumps(obj) + "\n")


def load_motion(path) -> MotionSequence:
    return MotionSequence.from_dict(_read_json(path))


def save_motion(seq: MotionSequence, path):
    _write_json(seq.to_dict(), path)


def load_pair(path) -> InteractionPair:
    return InteractionPair.from_dict(_read_json(path))


def save_pair(pair: InteractionPair, path):
    _write_json(pair.to_dict(), path)


def window_clip(pair: InteractionPair, n_target: int, start: int = 0) -> InteractionPair:
    """Crop both sequences to [start, start + n_target).

    Sources shorter than ``n_target`` are padded by repeating their last frame;
    ``valid_length`` records how many frames are real.
    """
    n = pair.frames
    if n == 0:
        raise EmptySequence("cannot window an empty pair")
    if n_target < 1 or start < 0:
        raise ValueError("n_target must be >= 1 and start >= 0")
    if n < n_target:
        idx = np.minimum(np.arange(n_target), n - 1)
        valid = n
    else:
        if start + n_target > n:
            raise ValueError(f"window [{start}, {start + n_target}) exceeds {n} frames")
        idx = np.arange(start, start + n_target)
        valid = n_target

    def take(seq):
        return replace(seq, pose=seq.pose[idx], root_orient=seq.root_orient[idx], transl=seq.transl[idx])

    return replace(pair, action=take(pair.action), reaction=take(pair.reaction), valid_length=valid)


def feature_dim(joints: int) -> int:
    return 6 * joints + 9


def sequence_to_features(seq: MotionSequence) -> np.ndarray:
    """(N, 6K + 9) feature matrix for a whole sequence."""
    n, k = seq.frames, seq.joints
    rots = axis_angle_to_matrix(np.concatenate([seq.pose.reshape(n, k, 3), seq.root_orient[:, None]], axis=1))
    sixd = matrix_to_sixd(torch.from_numpy(rots), check=False).numpy()
    return np.concatenate([sixd.reshape(n, -1), seq.transl], axis=1)


def frame_to_feature(seq: MotionSequence, i: int) -> np.ndarray:
    if not 0 <= i < seq.frames:
        raise IndexError(f"frame {i} out of range for {seq.frames} frames")
    return sequence_to_features(seq.slice(i, i + 1))[0]


def features_to_sequence(feats, fps: float = 20.0) -> MotionSequence:
    """Inverse of :func:`sequence_to_features`; 6D blocks are re-orthonormalized first."""
    feats = np.asarray(feats, dtype=np.float64)
    if feats.ndim != 2 or (feats.shape[1] - 9) % 6 or feats.shape[1] < 15:
        raise ShapeMismatch(f"feature matrix of shape {feats.shape} is not (N, 6K + 9)")
    n = feats.shape[0]
    k = (feats.shape[1] - 9) // 6
    mats = sixd_to_matrix(torch.from_numpy(feats[:, : 6 * (k + 1)].reshape(n, k + 1, 6)), check=False)
    aa = matrix_to_axis_angle(mats.numpy())
    return MotionSequence(aa[:, :k].reshape(n, 3 * k), aa[:, k], feats[:, -3:].copy(), fps)


def feature_to_frame(vec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Single-frame inverse: (pose (3K,), root_orient (3,), transl (3,))."""
    seq = features_to_sequence(np.asarray(vec, dtype=np.float64)[None])
    return seq.pose[0], seq.root_orient[0], seq.transl[0]


# --- annotations -------------------------------------------------------------

ANNOTATION_HEADER = ["sequence_id", "actor_index", "reactor_index", "label"]


@dataclass(frozen=True)
class AnnotationRecord:
    sequence_id: str
    actor_index: int
    reactor_index: int
    label: int

    def __post_init__(self):
        if self.actor_index not in (0, 1) or self.reactor_index not in (0, 1):
            raise InvalidRole(f"{self.sequence_id}: role indices must be 0 or 1")
        if self.actor_index == self.reactor_index:
            raise InvalidRole(f"{self.sequence_id}: actor and reactor are the same person")


def parse_annotation_row(row: list[str]) -> AnnotationRecord:
    if len(row) != 4:
        raise FormatError(f"expected 4 columns, got {len(row)}")
    sid = row[0].strip()
    if not sid:
        raise FormatError("empty sequence_id")
    try:
        actor, reactor, label = (int(v) for v in row[1:])
    except ValueError:
        raise FormatError(f"non-integer role or label in {row}") from None
    return AnnotationRecord(sid, actor, reactor, label)


def read_annotation_rows(path) -> list[tuple[int, list[str]]]:
    """Raw (line number, cells) rows after checking the header."""
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows or [c.strip() for c in rows[0]] != ANNOTATION_HEADER:
        raise FormatError(f"{path}: header must be {','.join(ANNOTATION_HEADER)}")
    return [(i, r) for i, r in enumerate(rows[1:], start=2) if any(c.strip() for c in r)]


def load_annotations(path) -> list[AnnotationRecord]:
    records = []
    for line, row in read_annotation_rows(path):
        try:
            records.append(parse_annotation_row(row))
        except (FormatError, InvalidRole) as e:
            raise type(e)(f"{path}:{line}: {e}") from None
    return records


def save_annotations(records, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(ANNOTATION_HEADER)
        for r in records:
            w.writerow([r.sequence_id, r.actor_index, r.reactor_index, r.label])


def apply_annotations(records, raw: dict) -> list[InteractionPair]:
    """Assign roles to two-person sequences.

    ``raw`` maps sequence_id to a pair of MotionSequences in stored person
    order (person 0, person 1).  Label names are kept only from
    :class:`InteractionPair` inputs whose label agrees with the record.
    """
    out = []
    for rec in records:
        if rec.sequence_id not in raw:
            raise UnknownSequence(f"annotation references unknown sequence {rec.sequence_id!r}")
        src = raw[rec.sequence_id]
        label_name = None
        if isinstance(src, InteractionPair):
            if src.label == rec.label:
                label_name = src.label_name
            src = (src.action, src.reaction)
        persons = tuple(src)
        out.append(InteractionPair(persons[rec.actor_index], persons[rec.reactor_index], rec.label, label_name))
    return out
