"""Seeded counter-based random streams.

Every consumer (weight init, sampling, ...) draws from its own Philox stream
keyed by ``(seed, stream name)``, so changing the number of samples never
perturbs the weight draws.
"""

from __future__ import annotations

import zlib

import numpy as np


def stream(seed: int, name: str) -> np.random.Generator:
    key = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(name.encode())])
    return np.random.Generator(np.random.Philox(key))


def uniform_samples(seed: int, n: int, dim: int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
    return stream(seed, "samples").uniform(low, high, size=(n, dim))
