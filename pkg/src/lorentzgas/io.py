"""Artifact writers: CSV with embedded config echo, canonical JSON, hashing.

Determinism contract: given (config, seed, workers), every byte of every
CSV/JSON artifact is reproducible.  Floats are rendered with repr
(shortest round-trip), JSON keys are sorted, and volatile data
(wall-clock) goes to a separate run_meta.json sidecar that is excluded
from hashes.
"""

from __future__ import annotations

import hashlib
import json
import subprocess
import time
from pathlib import Path


def fmt(v) -> str:
    """Shortest round-trip rendering; numpy scalars normalize to Python."""
    if hasattr(v, "item"):
        v = v.item()
    if isinstance(v, float):
        return repr(v)
    return str(v)


def build_id() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=5,
            cwd=Path(__file__).resolve().parent)
        if out.returncode == 0:
            return out.stdout.strip()
    except Exception:
        pass
    return "unversioned"


def artifact_meta(config_echo: dict, seed: int, workers: int,
                  flagged: int = 0, extra: dict | None = None) -> dict:
    meta = {
        "config_echo": config_echo,
        "seed": seed,
        "workers": workers,
        "build_id": build_id(),
        "flagged_samples": flagged,
    }
    if extra:
        meta.update(extra)
    return meta


def write_csv(path, columns: list[str], rows, meta: dict):
    """CSV with '# key: <json>' comment lines carrying the metadata."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    for k in sorted(meta):
        lines.append(f"# {k}: {json.dumps(meta[k], sort_keys=True)}")
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def read_csv(path):
    """Inverse of write_csv: returns (meta, columns, rows-of-strings)."""
    meta = {}
    columns = None
    rows = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            k, _, v = line[1:].partition(":")
            meta[k.strip()] = json.loads(v.strip())
        elif columns is None:
            columns = line.split(",")
        elif line:
            rows.append(line.split(","))
    return meta, columns, rows


def write_json(path, obj: dict):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=2,
                               default=_coerce) + "\n")


def _coerce(v):
    try:
        import numpy as np
        if isinstance(v, np.ndarray):
            return v.tolist()
        if isinstance(v, (np.integer,)):
            return int(v)
        if isinstance(v, (np.floating,)):
            return float(v)
    except ImportError:
        pass
    raise TypeError(f"not JSON serializable: {type(v)}")


def write_run_meta(out_dir, started: float):
    """Volatile sidecar: wall-clock only, excluded from determinism hashes."""
    write_json(Path(out_dir) / "run_meta.json", {
        "wall_clock_seconds": time.time() - started,
        "finished_unix": time.time(),
    })


def file_sha256(path) -> str:
    h = hashlib.sha256()
    h.update(Path(path).read_bytes())
    return h.hexdigest()
