"""Seeded random streams with a fully specified, portable construction.

Datasets and parameter initializations must be reproducible bit for bit
from integer seeds, so every random quantity is derived from the Philox
counter-based bit generator through explicitly written transformations:

* uniforms        ``Generator.random()`` doubles in [0, 1)
* normals         Box-Muller applied to pairs of uniforms
* integers        ``floor(u * n)`` from a single uniform
* permutations    Fisher-Yates driven by the integer rule above

Streams are keyed by ``(seed, salt)`` so independent purposes (data,
parameter init, batch shuffling) never share draws.
"""

from __future__ import annotations

import numpy as np


def make_rng(seed: int, salt: int = 0) -> np.random.Generator:
    """Philox stream keyed by (seed, salt)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence((int(seed), int(salt)))))


def normals(rng: np.random.Generator, shape) -> np.ndarray:
    """Standard normals via Box-Muller on Philox uniforms."""
    shape = (shape,) if np.isscalar(shape) else tuple(shape)
    n = int(np.prod(shape)) if shape else 1
    m = (n + 1) // 2
    u1 = 1.0 - rng.random(m)  # (0, 1], keeps the log finite
    u2 = rng.random(m)
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.concatenate([r * np.cos(2.0 * np.pi * u2), r * np.sin(2.0 * np.pi * u2)])
    return z[:n].reshape(shape)


def uniform(rng: np.random.Generator, low: float, high: float, shape) -> np.ndarray:
    shape = (shape,) if np.isscalar(shape) else tuple(shape)
    return low + (high - low) * rng.random(shape)


def randint(rng: np.random.Generator, n: int) -> int:
    """Uniform integer in [0, n)."""
    return min(int(rng.random() * n), n - 1)


def permutation(rng: np.random.Generator, n: int) -> np.ndarray:
    """Fisher-Yates shuffle of arange(n)."""
    out = np.arange(n)
    for i in range(n - 1, 0, -1):
        j = randint(rng, i + 1)
        out[i], out[j] = out[j], out[i]
    return out
