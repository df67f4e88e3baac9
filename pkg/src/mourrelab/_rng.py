"""Deterministic random streams.

Every random draw in the package flows from a single integer seed through a
counter-based Philox generator.  Subsystems get independent streams keyed by a
label, so adding draws in one place never shifts the numbers seen elsewhere.
"""

from __future__ import annotations

import hashlib

import numpy as np

DEFAULT_SEED = 0x5EED


def stream(label: str, seed: int = DEFAULT_SEED) -> np.random.Generator:
    """Return the Philox stream for `label` under `seed`."""
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    key = int.from_bytes(digest[:16], "little")
    return np.random.Generator(np.random.Philox(key=(key ^ seed) & ((1 << 128) - 1)))


def complex_probes(n: int, count: int, label: str, seed: int = DEFAULT_SEED) -> np.ndarray:
    """`count` unit-norm complex vectors of length `n`, stacked as rows."""
    rng = stream(label, seed)
    z = rng.standard_normal((count, n)) + 1j * rng.standard_normal((count, n))
    return z / np.linalg.norm(z, axis=1, keepdims=True)
