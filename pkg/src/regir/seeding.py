"""Deterministic randomness: named substreams derived from one master seed.

Every stochastic component (split, init, shuffle, mask, ...) draws from its
own generator so that components stay independently reproducible when other
parts of a pipeline change.
"""

from __future__ import annotations

import hashlib

import numpy as np


def subseed(seed: int, name: str) -> int:
    """Derive a stable 64-bit seed for the substream `name`."""
    digest = hashlib.sha256(f"{seed}:{name}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def substream(seed: int, name: str) -> np.random.Generator:
    """A fresh generator for the substream `name` of `seed`."""
    return np.random.Generator(np.random.PCG64(subseed(seed, name)))
