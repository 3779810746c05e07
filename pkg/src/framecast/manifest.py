"""Reproducibility manifests: canonical hashing of configs and run metadata.

Manifests deliberately contain no wall-clock timestamps so that reruns with the
same inputs produce byte-identical output trees.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

from . import __version__


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)


def config_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()[:16]


def write_manifest(directory: str | Path, command: str, config: dict, seed: int | None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    payload = {
        "tool": "framecast",
        "version": __version__,
        "command": command,
        "seed": seed,
        "config_hash": config_hash(config),
        "config": config,
    }
    path = directory / "manifest.json"
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=str) + "\n")
    return path
