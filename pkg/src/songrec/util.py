"""Shared plumbing: seeding, deterministic ranking, atomic file writes.

All randomness in the repository flows through ``numpy.random.Generator``
instances backed by the PCG64 bit generator (``np.random.default_rng``).
Identical seeds give identical streams.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile

import numpy as np


def derive_seed(root_seed: int, component: str) -> int:
    """Derive a per-component subseed from the root seed.

    Uses blake2b over ``"<root>:<component>"`` so components can be
    re-seeded independently while everything remains a pure function of
    the root seed.
    """
    digest = hashlib.blake2b(
        f"{root_seed}:{component}".encode("utf-8"), digest_size=8
    ).digest()
    return int.from_bytes(digest, "little")


def make_rng(seed: int) -> np.random.Generator:
    """The repository-wide generator: PCG64, seeded."""
    return np.random.default_rng(seed)


def top_k_indices(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest scores, descending; ties broken by ascending index.

    This is the single tie rule used everywhere: ranking is the total
    order (score descending, index ascending).
    """
    scores = np.asarray(scores)
    if not 1 <= k <= scores.shape[0]:
        raise ValueError(f"k={k} out of range for {scores.shape[0]} scores")
    # lexsort: last key is primary. -scores descending, arange breaks ties ascending.
    order = np.lexsort((np.arange(scores.shape[0]), -scores))
    return order[:k]


def config_hash(obj) -> str:
    """sha256 hex digest of the canonical JSON form of ``obj``."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def atomic_write_text(path, text: str) -> None:
    """Write text to ``path`` via a temp file + rename."""
    path = os.fspath(path)
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")
