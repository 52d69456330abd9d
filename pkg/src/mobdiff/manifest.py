"""Run manifests: every CLI command appends one JSON record per run with
the command, config hash, input/output hashes, seeds, and wall-clock."""

from __future__ import annotations

import hashlib
import json
import time
from pathlib import Path

TOOL_VERSION = "0.1.0"


def hash_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def hash_json(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def write_manifest(
    out_dir,
    command: str,
    config: dict | None,
    inputs: list,
    outputs: list,
    seeds: dict,
    started: float,
    extra: dict | None = None,
) -> Path:
    """Append a manifest record to <out_dir>/manifests.jsonl and return it."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    record = {
        "command": command,
        "tool_version": TOOL_VERSION,
        "config_hash": hash_json(config) if config is not None else None,
        "inputs": {str(p): hash_file(p) for p in inputs if Path(p).exists()},
        "outputs": {str(p): hash_file(p) for p in outputs if Path(p).exists()},
        "seeds": seeds,
        "wall_seconds": round(time.time() - started, 3),
        "finished_unix": round(time.time(), 3),
    }
    if extra:
        record.update(extra)
    path = out_dir / "manifests.jsonl"
    with open(path, "a") as f:
        f.write(json.dumps(record, sort_keys=True) + "\n")
    return path
