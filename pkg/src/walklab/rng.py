"""Splittable, counter-based randomness.

Every random object in the package is addressed by a tuple of integers
``(master_seed, stream, index, ...)``.  Each address owns an independent Philox
stream, so results never depend on the order in which work units run.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1


def seed_sequence(*key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(k) & MASK64 for k in key])


def generator(*key: int) -> np.random.Generator:
    """A Philox generator owned by the address ``key``."""
    return np.random.Generator(np.random.Philox(seed_sequence(*key)))


def derive_seed(*key: int) -> int:
    """A 64-bit seed derived deterministically from ``key``."""
    return int(seed_sequence(*key).generate_state(1, dtype=np.uint64)[0])


class UniformStreams:
    """Step-indexed uniforms for a batch of trajectory streams.

    Stream ``i`` of the batch is ``generator(master_seed, salt, indices[i])`` and
    its ``s``-th draw is the uniform used at step ``s``.  Draws are pulled in
    blocks so a vectorized walker can consume one column per step.
    """

    def __init__(self, master_seed: int, indices, salt: int = 0, block: int = 4096):
        self.indices = np.asarray(indices, dtype=np.int64)
        self._gens = [generator(master_seed, salt, int(i)) for i in self.indices]
        self._block = block
        self._buf = np.empty((self.indices.size, 0))
        self._pos = 0

    def next(self) -> np.ndarray:
        """One uniform per stream (the next step of every trajectory)."""
        if self._pos >= self._buf.shape[1]:
            self._buf = np.empty((self.indices.size, self._block))
            for row, g in enumerate(self._gens):
                self._buf[row] = g.random(self._block)
            self._pos = 0
        col = self._buf[:, self._pos]
        self._pos += 1
        return col
