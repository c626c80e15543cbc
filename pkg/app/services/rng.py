"""
Counter-based random streams.

Every draw is addressed by (seed, purpose, step) through a Philox key/counter pair, and
per-particle noise is picked from the step's table by particle label. Re-running any step,
permuting labels or re-summing increments for a coarser step therefore reproduces the same numbers.
"""

from typing import Tuple

import numpy as np

# stream purposes (second key word)
INITIAL_STREAM = 1
BROWNIAN_STREAM = 2
AUXILIARY_STREAM = 3


def generator(seed: int, purpose: int, step: int = 0) -> np.random.Generator:
    """
    Independent generator for one (seed, purpose, step) address.
    """
    key = np.array([int(seed) & 0xFFFFFFFFFFFFFFFF, purpose], dtype=np.uint64)
    counter = np.array([0, int(step), 0, 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


class CounterStreams:
    """
    Per-particle Gaussian streams keyed by (seed, particle label, step).
    """

    def __init__(self, seed: int):
        self.seed = int(seed)

    def normals(self, labels: np.ndarray, step: int, purpose: int = BROWNIAN_STREAM) -> np.ndarray:
        """
        Standard normal 3-vectors for the given particle labels at one step.

        Returns:
            Array of shape (len(labels), 3); row k depends only on (seed, labels[k], step)
        """
        labels = np.asarray(labels, dtype=np.int64)
        if labels.size == 0:
            return np.zeros((0, 3))
        table = generator(self.seed, purpose, step).standard_normal((int(labels.max()) + 1, 3))
        return table[labels]

    def brownian_increment(self, labels: np.ndarray, step: int, dt: float) -> np.ndarray:
        """
        Brownian increment dB ~ N(0, dt I) for each particle at one step.
        """
        return np.sqrt(dt) * self.normals(labels, step)

    def initial(self, n: int) -> Tuple[np.ndarray, np.ndarray]:
        """
        Normal (n x 3) and uniform (n) draws used by initial sampling.
        """
        gen = generator(self.seed, INITIAL_STREAM)
        return gen.standard_normal((n, 3)), gen.random(n)

    def auxiliary(self, step: int = 0) -> np.random.Generator:
        """
        Generator for post-processing randomness (projection directions, jitter).
        """
        return generator(self.seed, AUXILIARY_STREAM, step)
