"""Derivation of independent random streams from a single master seed.

Every randomized operation in the toolkit (uniform label assignment, resize
jitter, split sampling, probe trials) draws from its own stream, derived from
the master seed plus a purpose string and an index. Streams never overlap, so
adding a consumer cannot perturb the draws of an existing one.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(master_seed: int, purpose: str, index: int = 0) -> int:
    """Hash (master_seed, purpose, index) into a 64-bit stream seed."""
    payload = f"{master_seed}:{purpose}:{index}".encode("utf-8")
    digest = hashlib.sha256(payload).digest()
    return int.from_bytes(digest[:8], "little")


def derive_rng(master_seed: int, purpose: str, index: int = 0) -> np.random.Generator:
    """Return a Generator seeded for one named purpose."""
    return np.random.default_rng(derive_seed(master_seed, purpose, index))
