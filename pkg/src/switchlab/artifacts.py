"""Atomic artifact writing plus reproducibility manifests.

Every task writes its files through a temp-file-and-rename so partial
results never shadow finished ones, and records a manifest with the config
hash, package and numpy versions, the seed, and the wall time.  Identical
config and seed reproduce byte-identical CSVs; the manifest alone carries
run-varying metadata (wall time).
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

__all__ = ["atomic_path", "write_json_atomic", "canonical_json", "config_hash", "Manifest"]


@contextmanager
def atomic_path(final_path):
    """Yield a temp path in the target directory; rename over final on success."""
    final_path = Path(final_path)
    final_path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=final_path.parent, prefix=final_path.name + ".tmp")
    os.close(fd)
    try:
        yield tmp
        os.replace(tmp, final_path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def write_json_atomic(path, obj) -> None:
    with atomic_path(path) as tmp:
        with open(tmp, "w") as fh:
            json.dump(obj, fh, indent=2, sort_keys=True)
            fh.write("\n")


class Manifest:
    """Collects run metadata; written last so it lists finished artifacts."""

    def __init__(self, task: str, config: dict, seed, out_dir):
        from . import __version__

        self.out_dir = Path(out_dir)
        self.data = {
            "task": task,
            "config": config,
            "config_sha256": config_hash(config),
            "seed": seed,
            "versions": {"switchlab": __version__, "numpy": np.__version__},
            "artifacts": [],
            "status": "running",
        }
        self._t0 = time.monotonic()

    def add(self, name: str) -> None:
        self.data["artifacts"].append(name)

    def finish(self, status: str = "ok", error: str | None = None, **extra) -> None:
        self.data["status"] = status
        if error is not None:
            self.data["error"] = error
        self.data.update(extra)
        self.data["wall_time_s"] = round(time.monotonic() - self._t0, 6)
        write_json_atomic(self.out_dir / "manifest.json", self.data)
