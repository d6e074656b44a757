"""Seeded, platform-independent random streams.

All randomness in the package flows through the splitmix64 state transition:

    state' = (state + 0x9E3779B97F4A7C15) mod 2^64
    z = state'
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) mod 2^64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) mod 2^64
    output = z ^ (z >> 31)

This is "version 1" of the stream format: serialized artifacts (permuted
workloads, noise replays) remain reproducible bit-for-bit across platforms
as long as this transition is unchanged.
"""

import numpy as np

GOLDEN = 0x9E3779B97F4A7C15
MASK64 = (1 << 64) - 1
STREAM_VERSION = 1


def _finalize(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive(seed: int, index: int) -> int:
    """The index-th output of the stream seeded at `seed`; used to split seeds."""
    return _finalize((seed + (index + 1) * GOLDEN) & MASK64)


class SplitMix64:
    """Sequential splitmix64 stream with float/vector helpers."""

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN) & MASK64
        return _finalize(self.state)

    def _u64_array(self, k: int) -> np.ndarray:
        # vectorized continuation of the sequential stream
        idx = np.arange(1, k + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + idx * np.uint64(GOLDEN)
            self.state = int(z[-1]) if k else self.state
            z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
            z = z ^ (z >> np.uint64(31))
        return z

    def uniform(self, size: int) -> np.ndarray:
        """i.i.d. uniforms on the open interval (0, 1)."""
        z = self._u64_array(size)
        return ((z >> np.uint64(12)).astype(np.float64) + 0.5) * 2.0 ** -52

    def below(self, bound: int) -> int:
        """Unbiased integer in [0, bound) by rejection."""
        lim = (MASK64 + 1) - ((MASK64 + 1) % bound)
        while True:
            z = self.next_u64()
            if z < lim:
                return z % bound

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates permutation of range(n)."""
        perm = np.arange(n)
        for i in range(n - 1, 0, -1):
            j = self.below(i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return perm

    def laplace(self, size: int, scale: float) -> np.ndarray:
        """Inverse-CDF sampling: scale * sign(u - .5) * log(1 - 2|u - .5|)."""
        u = self.uniform(size)
        return scale * np.sign(u - 0.5) * np.log1p(-2.0 * np.abs(u - 0.5))

    def normal(self, size: int, sigma: float) -> np.ndarray:
        """Marsaglia polar method; batch rejection consumes the stream in pairs."""
        out = np.empty(0)
        while out.size < size:
            k = max(size - out.size, 16)
            u = self.uniform(k) * 2.0 - 1.0
            v = self.uniform(k) * 2.0 - 1.0
            s = u * u + v * v
            keep = (s > 0.0) & (s < 1.0)
            u, v, s = u[keep], v[keep], s[keep]
            f = np.sqrt(-2.0 * np.log(s) / s)
            out = np.concatenate([out, u * f, v * f])
        return sigma * out[:size]
