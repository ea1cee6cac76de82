"""Counter-based random streams.

Every (seed, pixel, sample) triple names an independent stream, so a render
draws the same numbers no matter how pixels are distributed over workers.
The mixing function is SplitMix64's finalizer; draws are 53-bit doubles in
[0, 1).
"""

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_PIX = np.uint64(0xD1B54A32D192ED03)
_INV53 = 1.0 / 9007199254740992.0


@njit(cache=True, inline="always")
def mix64(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def stream_key(seed, pixel, sample):
    k = mix64(np.uint64(seed) + _GOLDEN)
    k = mix64(k ^ (np.uint64(pixel) * _PIX + _GOLDEN))
    return mix64(k + np.uint64(sample) * _GOLDEN + np.uint64(1))


@njit(cache=True, inline="always")
def uniform(key, counter):
    z = mix64(np.uint64(key) + np.uint64(counter + 1) * _GOLDEN)
    return np.float64(z >> np.uint64(11)) * _INV53


@njit(cache=True)
def _fill(key, counter, out):
    for i in range(out.shape[0]):
        out[i] = uniform(key, counter + i)


def _as_u64(x):
    return np.uint64(int(x) % (1 << 64))


class RandomStream:
    """Deterministic uniform stream for one (seed, pixel, sample) triple."""

    def __init__(self, seed, pixel=0, sample=0):
        self.key = np.uint64(stream_key(_as_u64(seed), _as_u64(pixel), _as_u64(sample)))
        self.counter = 0

    def random(self, size=None):
        if size is None:
            u = uniform(self.key, np.int64(self.counter))
            self.counter += 1
            return float(u)
        out = np.empty(int(np.prod(size)), dtype=np.float64)
        _fill(self.key, np.int64(self.counter), out)
        self.counter += out.size
        return out.reshape(size)


def make_rng(seed, stream=(0, 0)):
    pixel, sample = stream
    return RandomStream(seed, pixel, sample)
