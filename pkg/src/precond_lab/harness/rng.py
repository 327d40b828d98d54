"""SplitMix64: a tiny, fully specified 64-bit generator.

Output k (k = 1, 2, ...) of a generator seeded with s is mix(s + k * GAMMA)
modulo 2^64, with the standard SplitMix64 finalizer. Because outputs depend
only on (seed, k), whole blocks are generated at once with uint64 numpy
arithmetic.

Derived streams:
  uniform  -- (u >> 11) * 2^-53, in [0, 1)
  normal   -- Box-Muller on consecutive pairs (u1, u2):
              sqrt(-2 ln(1 - u1)) * (cos(2 pi u2), sin(2 pi u2)), interleaved
"""
import numpy as np

GAMMA = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB
MASK64 = (1 << 64) - 1


class SplitMix64:
    def __init__(self, seed: int):
        self.state = int(seed) & MASK64

    def next_u64(self, size: int) -> np.ndarray:
        k = np.arange(1, size + 1, dtype=np.uint64)
        z = np.uint64(self.state) + k * np.uint64(GAMMA)
        self.state = (self.state + size * GAMMA) & MASK64
        z = (z ^ (z >> np.uint64(30))) * np.uint64(MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(MIX2)
        return z ^ (z >> np.uint64(31))

    def uniform(self, shape=()) -> np.ndarray:
        size = int(np.prod(shape, dtype=np.int64))
        u = (self.next_u64(size) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
        return u.reshape(shape)

    def normal(self, shape=()) -> np.ndarray:
        size = int(np.prod(shape, dtype=np.int64))
        pairs = (size + 1) // 2
        u = self.uniform((pairs, 2))
        radius = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        angle = 2.0 * np.pi * u[:, 1]
        z = np.column_stack([radius * np.cos(angle), radius * np.sin(angle)]).ravel()
        return z[:size].reshape(shape)

    # numpy.random.Generator-compatible names
    standard_normal = normal
    random = uniform
