"""Named random streams derived from one integer seed."""

from __future__ import annotations

import zlib

import numpy as np


def derive_rng(seed: int, name: str) -> np.random.Generator:
    """Independent generator for ``name``; the same (seed, name) always gives the same stream."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())]))
