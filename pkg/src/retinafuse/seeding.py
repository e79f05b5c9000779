"""Seed derivation shared by every stage.

All randomness comes from a single user seed. Stages derive their own
sub-seeds by hashing the seed together with a label path, then build a
Philox (counter-based) generator from the derived key. Philox output for a
given key is fixed across platforms, so derived streams are reproducible
and independent of call order or worker count.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(seed: int, *labels: object) -> int:
    """Return a 64-bit seed derived from ``seed`` and a label path."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(seed)).encode())
    for label in labels:
        h.update(b"/")
        h.update(str(label).encode())
    return int.from_bytes(h.digest(), "little")


def make_rng(seed: int, *labels: object) -> np.random.Generator:
    """Philox-backed generator keyed by ``derive_seed(seed, *labels)``."""
    return np.random.Generator(np.random.Philox(key=derive_seed(seed, *labels)))
