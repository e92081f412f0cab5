"""Counter-based deterministic pseudorandom numbers.

Every value is a pure function of (key, stream, counter), so independent
streams can be split off for parallel work without sharing state, and a
fixed seed reproduces the exact same byte sequence on every run.
The mixing function is SplitMix64; Gaussians come from Box-Muller.
"""

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_TWO53 = float(1 << 53)


def _mix64(x):
    """SplitMix64 finalizer on uint64 scalars or arrays."""
    x = np.uint64(x) if np.isscalar(x) else x.astype(np.uint64)
    x ^= x >> np.uint64(30)
    x *= _MIX1
    x ^= x >> np.uint64(27)
    x *= _MIX2
    x ^= x >> np.uint64(31)
    return x


class Rng:
    """Deterministic counter-based generator with stream splitting."""

    def __init__(self, seed: int, stream: int = 0):
        seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        stream = int(stream) & 0xFFFFFFFFFFFFFFFF
        with np.errstate(over="ignore"):
            self._key = _mix64(np.uint64(seed) * _GOLDEN + _mix64(np.uint64(stream)))
        self._counter = 0
        self._spare = None  # cached second Box-Muller deviate

    def split(self, stream: int) -> "Rng":
        """Derive an independent child stream; does not advance this one."""
        with np.errstate(over="ignore"):
            child_seed = int(_mix64(self._key + np.uint64(int(stream) + 1)))
        return Rng(child_seed, stream)

    def _raw(self, n: int) -> np.ndarray:
        """Next n raw uint64 words."""
        idx = np.arange(self._counter, self._counter + n, dtype=np.uint64)
        self._counter += n
        with np.errstate(over="ignore"):
            return _mix64(self._key + (idx + np.uint64(1)) * _GOLDEN)

    def uniform(self, size=None):
        """Uniform floats in (0, 1)."""
        n = 1 if size is None else int(np.prod(size))
        u = ((self._raw(n) >> np.uint64(11)).astype(np.float64) + 0.5) / _TWO53
        if size is None:
            return float(u[0])
        return u.reshape(size)

    def normal(self, size=None):
        """Standard normal deviates via Box-Muller."""
        n = 1 if size is None else int(np.prod(size))
        m = (n + 1) // 2
        u1 = self.uniform(m)
        u2 = self.uniform(m)
        r = np.sqrt(-2.0 * np.log(u1))
        a = 2.0 * np.pi * u2
        z = np.concatenate([r * np.cos(a), r * np.sin(a)])[:n]
        if size is None:
            return float(z[0])
        return z.reshape(size)

    def randint(self, n: int, size=None):
        """Integers uniform on [0, n); modulo bias negligible for n << 2^64."""
        k = 1 if size is None else int(np.prod(size))
        v = (self._raw(k) % np.uint64(n)).astype(np.int64)
        if size is None:
            return int(v[0])
        return v.reshape(size)
