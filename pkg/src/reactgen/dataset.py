"""On-disk dataset directories: ``index.json``, ``pairs/*.json``, ``annotations.csv``.

Pair files store the two persons in a fixed order (``action`` = person 0,
``reaction`` = person 1); the annotation CSV decides who is the actor.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError
from .motion import (
    AnnotationRecord,
    InteractionPair,
    apply_annotations,
    load_annotations,
    load_pair,
    save_annotations,
    save_pair,
)
from .rotations import Skeleton

INDEX_FORMAT = "reactgen-dataset/1"


@dataclass
class Dataset:
    ids: list[str]
    pairs: list[InteractionPair]
    splits: list[str]
    skeleton: Skeleton
    class_names: list[str]

    def subset(self, split: str | None) -> "Dataset":
        if split is None:
            return self
        keep = [i for i, s in enumerate(self.splits) if s == split]
        return Dataset([self.ids[i] for i in keep], [self.pairs[i] for i in keep],
                       [split] * len(keep), self.skeleton, self.class_names)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def __len__(self):
        return len(self.pairs)


def assign_splits(labels, test_fraction: float = 0.2) -> list[str]:
    """Per class, the last ``test_fraction`` of its items (at least one when a class has 2+) go to test."""
    labels = list(labels)
    splits = ["train"] * len(labels)
    for c in sorted(set(labels)):
        idx = [i for i, l in enumerate(labels) if l == c]
        n_test = int(round(len(idx) * test_fraction))
        if len(idx) >= 2:
            n_test = min(max(n_test, 1), len(idx) - 1)
        else:
            n_test = 0
        for i in idx[len(idx) - n_test:]:
            splits[i] = "test"
    return splits


def write_dataset(pairs, out_dir, skeleton: Skeleton, class_names, test_fraction: float = 0.2) -> list[Path]:
    out = Path(out_dir)
    (out / "pairs").mkdir(parents=True, exist_ok=True)
    splits = assign_splits([p.label for p in pairs], test_fraction)
    entries, records, written = [], [], []
    for i, (pair, split) in enumerate(zip(pairs, splits)):
        sid = f"seq_{i:05d}"
        path = out / "pairs" / f"{sid}.json"
        save_pair(pair, path)
        written.append(path)
        entries.append({"id": sid, "file": f"pairs/{sid}.json", "label": pair.label,
                        "label_name": pair.label_name, "split": split})
        records.append(AnnotationRecord(sid, 0, 1, pair.label if pair.label is not None else -1))
    index = {
        "format": INDEX_FORMAT,
        "skeleton": skeleton.to_dict(),
        "class_names": list(class_names),
        "sequences": entries,
    }
    (out / "index.json").write_text(json.dumps(index, indent=1) + "\n")
    save_annotations(records, out / "annotations.csv")
    return written + [out / "index.json", out / "annotations.csv"]


def read_index(data_dir) -> dict:
    path = Path(data_dir) / "index.json"
    try:
        index = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: {e}") from None
    if index.get("format") != INDEX_FORMAT:
        raise FormatError(f"{path}: unsupported dataset format {index.get('format')!r}")
    return index


def load_dataset(data_dir, annotations=None, split: str | None = None) -> Dataset:
    """Load pairs, assigning roles from ``annotations`` (path or record list) when given."""
    data_dir = Path(data_dir)
    index = read_index(data_dir)
    entries = index["sequences"]
    raw = {e["id"]: load_pair(data_dir / e["file"]) for e in entries}
    split_of = {e["id"]: e["split"] for e in entries}
    if annotations is None:
        ids = [e["id"] for e in entries]
        pairs = [raw[i] for i in ids]
    else:
        records = load_annotations(annotations) if isinstance(annotations, (str, Path)) else list(annotations)
        ids = [r.sequence_id for r in records]
        pairs = apply_annotations(records, raw)
    ds = Dataset(ids, pairs, [split_of[i] for i in ids], Skeleton.from_dict(index["skeleton"]),
                 list(index["class_names"]))
    return ds.subset(split)


def shuffle_roles(records, fraction: float = 0.5, seed: int = 0) -> list[AnnotationRecord]:
    """Swap actor/reactor on a random ``fraction`` of records (role-annotation ablation)."""
    rng = np.random.default_rng(seed)
    n = len(records)
    flip = set(rng.choice(n, size=int(round(fraction * n)), replace=False).tolist())
    return [
        AnnotationRecord(r.sequence_id, r.reactor_index, r.actor_index, r.label) if i in flip else r
        for i, r in enumerate(records)
    ]
