"""Labelled seed derivation: every random stream comes from one run seed."""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(*parts: object) -> int:
    """64-bit seed from an ordered tuple of labels and integers."""
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        h.update(repr(p).encode())
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "little")


def rng_for(*parts: object) -> np.random.Generator:
    """Counter-based generator keyed by ``derive_seed(*parts)``."""
    return np.random.Generator(np.random.Philox(key=derive_seed(*parts)))
