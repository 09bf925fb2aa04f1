"""Shared runtime helpers: seeding, determinism mode, worker limits."""

import hashlib
import json
import os

import numpy as np
import torch


def seed_all(seed: int) -> None:
    """Seed both torch and numpy global RNGs (training entry points only).

    Library code that needs randomness takes an explicit seed or Generator;
    this is for the top of a training run.
    """
    torch.manual_seed(seed)
    np.random.seed(seed % 2**32)


def deterministic_mode(enable: bool = True) -> None:
    """Single-threaded deterministic execution, for reproducible runs."""
    if enable:
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True)


def num_workers(default: int = 1) -> int:
    """Worker cap for batch image work, from RLS_NUM_WORKERS."""
    raw = os.environ.get("RLS_NUM_WORKERS", "")
    try:
        n = int(raw)
    except ValueError:
        return default
    return max(1, n)


def derive_seed(base: int, *keys) -> int:
    """Stable per-task seed derived from a base seed and hashable keys."""
    text = json.dumps([int(base), *[str(k) for k in keys]])
    digest = hashlib.sha256(text.encode()).digest()
    return int.from_bytes(digest[:8], "little") % (2**63)


def json_digest(obj) -> str:
    """sha256 over a canonical JSON rendering (sorted keys, no whitespace)."""
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()
