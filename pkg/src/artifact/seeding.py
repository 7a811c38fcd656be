"""Deterministic seed derivation.

All randomness flows from one run seed, expanded per use-site by a stable
hash of string/int tags so results are independent of worker scheduling
and of Python's per-process hash randomization.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(*parts: int | str) -> int:
    h = hashlib.sha256()
    for part in parts:
        h.update(repr(part).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest()[:8], "little")


def rng_for(*parts: int | str) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(*parts)))


def normal_noise(shape: tuple[int, ...], *parts: int | str) -> np.ndarray:
    """Seeded standard-normal float32 draw, reproducible across runs."""
    return rng_for(*parts).standard_normal(shape, dtype=np.float32)
