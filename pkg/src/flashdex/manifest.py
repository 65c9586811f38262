"""Reproducibility manifests: every pipeline artifact gets a JSON sidecar
recording the stage, its parameters, content hashes of every input, the hash
of the output, and wall time, so any artifact can be regenerated bit-for-bit
from its manifest chain."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

TOOL_TAG = "flashdex/0.1.0"


def sha256_file(path: str | Path) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def manifest_path(artifact: str | Path) -> Path:
    return Path(str(artifact) + ".manifest.json")


def write_manifest(
    artifact: str | Path,
    stage: str,
    params: dict,
    inputs: list[str | Path],
    wall_time_s: float,
) -> Path:
    payload = {
        "tool": TOOL_TAG,
        "stage": stage,
        "artifact": str(artifact),
        "artifact_sha256": sha256_file(artifact),
        "params": params,
        "inputs": {str(p): sha256_file(p) for p in inputs},
        "wall_time_s": wall_time_s,
    }
    out = manifest_path(artifact)
    out.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
    return out
