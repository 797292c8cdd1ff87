"""Portable splitmix64 random streams.

Every random draw in the package goes through :class:`Rng` so that a
``(seed, stream)`` pair reproduces the same numbers on any platform.  The
generator is counter based: output ``i`` is ``mix(key + (i + 1) * GAMMA)``
where ``mix`` is the splitmix64 finaliser, so blocks of values can be produced
with vectorised uint64 arithmetic.

Child streams are derived from the parent's *key* and a string tag, never from
the parent's consumption state, which keeps parallel work order independent::

    rng = Rng(20260301)
    fold_rng = rng.derive("outer/3")
"""

from __future__ import annotations

import hashlib

import numpy as np

GAMMA = 0x9E3779B97F4A7C15
MASK64 = 0xFFFFFFFFFFFFFFFF

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def mix64(z: int) -> int:
    """splitmix64 finaliser on a Python int."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def _mix_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def tag_hash(tag: str) -> int:
    return int.from_bytes(hashlib.blake2b(tag.encode("utf-8"), digest_size=8).digest(), "little")


class Rng:
    """Single-owner random stream.

    Args:
        seed: 64-bit seed.
        stream: optional tag selecting an independent stream for the same seed.
    """

    def __init__(self, seed: int, stream: str | None = None):
        self.seed = int(seed) & MASK64
        self.stream = stream
        key = mix64(self.seed ^ 0x6A09E667F3BCC909)
        if stream is not None:
            key = mix64(key ^ tag_hash(stream))
        self._key = key
        self._counter = 0

    @classmethod
    def _from_key(cls, key: int, seed: int, stream: str) -> "Rng":
        obj = cls.__new__(cls)
        obj.seed = seed
        obj.stream = stream
        obj._key = key
        obj._counter = 0
        return obj

    def derive(self, tag: str | int) -> "Rng":
        """Independent child stream; does not advance this stream."""
        tag = str(tag)
        stream = tag if self.stream is None else f"{self.stream}/{tag}"
        return Rng._from_key(mix64(self._key ^ tag_hash(tag)), self.seed, stream)

    # raw output -----------------------------------------------------------
    def next_u64(self, size: int | None = None):
        if size is None:
            self._counter += 1
            return mix64(self._key + self._counter * GAMMA)
        size = int(size)
        if size < 0:
            raise ValueError("size must be non-negative")
        with np.errstate(over="ignore"):
            steps = np.arange(self._counter + 1, self._counter + size + 1, dtype=np.uint64)
            z = np.uint64(self._key) + steps * np.uint64(GAMMA)
            out = _mix_array(z)
        self._counter += size
        return out

    def random(self, size: int | None = None):
        """Uniform floats on [0, 1) with 53 bits of precision."""
        if size is None:
            return (self.next_u64() >> 11) * 2.0**-53
        return (self.next_u64(size) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    # distributions --------------------------------------------------------
    def uniform(self, low=0.0, high=1.0, size=None):
        u = self.random(size)
        return low + (high - low) * u

    def integers(self, low: int, high: int, size=None):
        """Integers in ``[low, high)``."""
        if high <= low:
            raise ValueError("empty integer range")
        span = high - low
        u = self.random(size)
        if size is None:
            return low + min(int(u * span), span - 1)
        return low + np.minimum((u * span).astype(np.int64), span - 1)

    def normal(self, mean=0.0, sigma=1.0, size=None):
        # Box-Muller, cosine branch only; one normal per pair of uniforms.
        n = 1 if size is None else int(size)
        u1 = 1.0 - self.random(n)  # (0, 1]
        u2 = self.random(n)
        z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
        out = mean + sigma * z
        return float(out[0]) if size is None else out

    def lognormal(self, mean=0.0, sigma=1.0, size=None):
        out = np.exp(self.normal(mean, sigma, size))
        return float(out) if size is None else out

    def exponential(self, scale=1.0, size=None):
        u = 1.0 - self.random(size)
        return -scale * np.log(u)

    def bernoulli(self, p, size=None):
        u = self.random(size)
        return u < p

    def permutation(self, n: int) -> np.ndarray:
        keys = self.next_u64(n)
        return np.argsort(keys, kind="stable")

    def choice(self, n_items: int, size=None, p=None, replace=True):
        """Draw indices in ``range(n_items)``.

        With ``p`` and ``replace=False`` the draw uses exponential keys
        (Efraimidis-Spirakis), i.e. successive weighted sampling.
        """
        if n_items <= 0:
            raise ValueError("cannot choose from an empty set")
        scalar = size is None
        k = 1 if scalar else int(size)
        if p is None:
            if replace:
                out = self.integers(0, n_items, k)
            else:
                if k > n_items:
                    raise ValueError("sample larger than population")
                out = self.permutation(n_items)[:k]
        else:
            p = np.asarray(p, dtype=np.float64)
            if p.shape != (n_items,) or np.any(p < 0) or p.sum() <= 0:
                raise ValueError("invalid probability vector")
            p = p / p.sum()
            if replace:
                cdf = np.cumsum(p)
                cdf[-1] = 1.0
                out = np.searchsorted(cdf, self.random(k), side="right")
                out = np.minimum(out, n_items - 1)
            else:
                if k > np.count_nonzero(p):
                    raise ValueError("sample larger than support")
                u = 1.0 - self.random(n_items)
                with np.errstate(divide="ignore"):
                    keys = np.where(p > 0, np.log(u) / p, -np.inf)
                out = np.argsort(-keys, kind="stable")[:k]
        return int(out[0]) if scalar else np.asarray(out, dtype=np.int64)

    def __repr__(self):
        return f"Rng(seed={self.seed}, stream={self.stream!r}, drawn={self._counter})"
