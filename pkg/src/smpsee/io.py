"""Deterministic CSV/JSON writers and run manifests."""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from . import __version__


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


def write_csv(path, header, rows) -> Path:
    """Floats are written with ``repr`` so files round-trip exactly and compare byte-for-byte."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def _default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_default) + "\n")
    return path


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def content_hash(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def write_manifest(out_dir, command: str, config, outputs, extra=None) -> Path:
    """``manifest.json``: config echo, seed, input hash, and a hash of every output file."""
    out_dir = Path(out_dir)
    config_text = config.to_text()
    manifest = {
        "command": command,
        "package_version": __version__,
        "seed": config.seed,
        "config": config.to_dict(),
        "config_text": config_text,
        "input_hash": content_hash(f"{command}\n{config_text}"),
        "outputs": {Path(p).name: sha256_file(p) for p in sorted(map(str, outputs))},
    }
    if extra:
        manifest["extra"] = extra
    return write_json(out_dir / "manifest.json", manifest)
