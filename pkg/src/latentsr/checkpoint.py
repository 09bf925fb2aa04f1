"""Checkpoint archive: named float arrays (npz) plus a JSON manifest.

Layout: a directory holding `arrays.npz` and `manifest.json`. The manifest
records the format version, the model kind, per-array shapes/dtypes, and a
metadata block (model hyperparameters, training log, seeds). Digests are
computed over array contents and the manifest, not over zip bytes, so they
are stable across re-saves of identical models.
"""

import hashlib
import json
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


def save_checkpoint(path, kind: str, arrays: dict, meta: dict) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    arrays = {k: np.asarray(v) for k, v in arrays.items()}
    np.savez(path / "arrays.npz", **arrays)
    manifest = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "arrays": {
            k: {"shape": list(v.shape), "dtype": str(v.dtype)}
            for k, v in sorted(arrays.items())
        },
        "meta": meta,
    }
    with open(path / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return path


def load_checkpoint(path):
    """Returns (kind, arrays, meta)."""
    path = Path(path)
    with open(path / "manifest.json") as fh:
        manifest = json.load(fh)
    if manifest["format_version"] != FORMAT_VERSION:
        raise ValueError(
            f"unsupported checkpoint format {manifest['format_version']}"
        )
    with np.load(path / "arrays.npz") as data:
        arrays = {k: data[k] for k in data.files}
    return manifest["kind"], arrays, manifest["meta"]


def checkpoint_digest(path) -> str:
    """sha256 over array contents + manifest, independent of zip metadata."""
    path = Path(path)
    with open(path / "manifest.json") as fh:
        manifest = json.load(fh)
    h = hashlib.sha256()
    h.update(json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode())
    with np.load(path / "arrays.npz") as data:
        for name in sorted(data.files):
            arr = np.ascontiguousarray(data[name])
            h.update(name.encode())
            h.update(str(arr.dtype).encode())
            h.update(str(arr.shape).encode())
            h.update(arr.tobytes())
    return h.hexdigest()


def exists(path) -> bool:
    path = Path(path)
    return (path / "arrays.npz").is_file() and (path / "manifest.json").is_file()
