"""Deterministic seed derivation.

Every stochastic choice in the package runs off a numpy Generator whose seed
is derived from (base_seed, *string keys) with a cryptographic hash. This
makes per-utterance / per-step randomness independent of iteration order, so
parallel and serial runs produce bit-identical results.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(base_seed: int, *keys) -> int:
    """Stable 63-bit seed from a base seed and a chain of keys."""
    h = hashlib.sha256()
    h.update(str(int(base_seed)).encode("utf-8"))
    for key in keys:
        h.update(b"\x1f")
        h.update(str(key).encode("utf-8"))
    return int.from_bytes(h.digest()[:8], "little") & 0x7FFFFFFFFFFFFFFF


def derived_rng(base_seed: int, *keys) -> np.random.Generator:
    """Generator seeded by ``derive_seed(base_seed, *keys)``."""
    return np.random.default_rng(derive_seed(base_seed, *keys))
