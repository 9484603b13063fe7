"""Seeded random streams and weight initialization."""

import zlib

import numpy as np

ALGORITHM = "PCG64"


class RngStream:
    """A named, seeded PCG64 stream.

    ``child`` derives independent streams deterministically from a label, so
    per-record or per-epoch randomness never depends on call order elsewhere.
    """

    def __init__(self, seed, algorithm=ALGORITHM):
        if algorithm != ALGORITHM:
            raise ValueError(f"unsupported rng algorithm {algorithm!r}")
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.algorithm = algorithm
        self.draws = 0
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def child(self, *labels):
        key = [self.seed] + [zlib.crc32(str(lab).encode()) for lab in labels]
        sub = np.random.SeedSequence(key).generate_state(2, dtype=np.uint64)
        return RngStream(int(sub[0]) ^ (int(sub[1]) << 1))

    def _count(self, size):
        self.draws += int(np.prod(size)) if size is not None else 1

    def random(self, size=None):
        self._count(size)
        return self._gen.random(size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        self._count(size)
        return self._gen.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        self._count(size)
        return self._gen.integers(low, high, size)

    def permutation(self, n):
        self._count(n)
        return self._gen.permutation(n)

    def choice(self, a, size=None, replace=True):
        self._count(size)
        return self._gen.choice(a, size=size, replace=replace)


def he_normal_init(shape, fan_in, rng):
    """I.i.d. N(0, 2/fan_in) draws."""
    if fan_in < 1:
        raise ValueError(f"fan_in must be >= 1, got {fan_in}")
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=tuple(shape))
