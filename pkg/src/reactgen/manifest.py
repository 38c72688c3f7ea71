"""Run manifests: one JSON record per CLI invocation."""

from __future__ import annotations

import hashlib
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import __version__


def cache_dir() -> Path:
    """Extractor/checkpoint cache, overridable with ``REGEN_CACHE``."""
    root = os.environ.get("REGEN_CACHE")
    path = Path(root) if root else Path.home() / ".cache" / "reactgen"
    path.mkdir(parents=True, exist_ok=True)
    return path


def content_hash(path) -> str:
    """sha256 of a file, or of a directory's relative paths and file contents in sorted order."""
    path = Path(path)
    h = hashlib.sha256()
    if path.is_dir():
        for f in sorted(p for p in path.rglob("*") if p.is_file() and p.name != "manifest.json"):
            h.update(str(f.relative_to(path)).encode())
            h.update(b"\0")
            h.update(hashlib.sha256(f.read_bytes()).digest())
    else:
        h.update(path.read_bytes())
    return h.hexdigest()


def now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


class RunManifest:
    def __init__(self, command: str, config: dict, seed, argv=None):
        self.record = {
            "command": command,
            "argv": list(sys.argv[1:] if argv is None else argv),
            "version": __version__,
            "config": config,
            "seed": seed,
            "inputs": {},
            "outputs": [],
            "started": now(),
        }

    def add_input(self, path):
        if path is not None and Path(path).exists():
            self.record["inputs"][str(path)] = content_hash(path)

    def add_output(self, path):
        self.record["outputs"].append(str(path))

    def write(self, path, **extra) -> Path:
        self.record.update(extra)
        self.record["finished"] = now()
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.record, indent=1, default=str) + "\n")
        return path
