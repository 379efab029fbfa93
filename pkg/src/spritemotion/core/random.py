"""Seeded random source with a fixed, documented normal-variate transform.

Uniforms come from the PCG64 bit generator: each double is
``(next_uint64 >> 11) * 2**-53``, a stream numpy keeps stable across
platforms and versions. Normals use the Box-Muller transform on consecutive
uniform pairs ``(u1, u2)``::

    r  = sqrt(-2 ln(1 - u1))
    z0 = r cos(2 pi u2),  z1 = r sin(2 pi u2)

emitted interleaved ``z0, z1, z0', z1', ...``. An odd request discards the
trailing variate, so a draw of ``n`` normals always consumes
``2 * ceil(n / 2)`` uniforms.
"""
from __future__ import annotations

import numpy as np

from .tensor import Tensor, default_dtype


class RandomSource:
    """Not thread-safe; give each thread its own source."""

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, shape=()) -> np.ndarray:
        return self._gen.random(shape)

    def normal(self, shape=(), dtype=np.float64) -> np.ndarray:
        shape = tuple(np.atleast_1d(shape)) if np.ndim(shape) else (() if shape == () else (int(shape),))
        n = int(np.prod(shape)) if shape else 1
        pairs = (n + 1) // 2
        u = self._gen.random(2 * pairs).reshape(pairs, 2)
        r = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        theta = 2.0 * np.pi * u[:, 1]
        z = np.empty((pairs, 2))
        z[:, 0] = r * np.cos(theta)
        z[:, 1] = r * np.sin(theta)
        return z.reshape(-1)[:n].reshape(shape).astype(dtype, copy=False)

    def integers(self, high: int, shape=()) -> np.ndarray:
        """Uniform integers in ``[0, high)`` via ``floor(u * high)``."""
        return np.minimum((self.uniform(shape) * high).astype(np.int64), high - 1)

    def bernoulli(self, p: float, shape=()) -> np.ndarray:
        return self.uniform(shape) < p

    def spawn(self, key: int) -> "RandomSource":
        """Independent child source derived from (seed, key)."""
        ss = np.random.SeedSequence([self.seed, int(key)])
        return RandomSource(int(ss.generate_state(1, np.uint64)[0]))


def sample_standard_normal(rng: RandomSource, shape) -> Tensor:
    """i.i.d. N(0, 1) tensor in the current default precision."""
    return Tensor(rng.normal(shape), dtype=default_dtype())
