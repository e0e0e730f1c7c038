"""Deterministic pseudo-randomness for every seeded operation in the package.

All sampling (synthetic data, head initialization, shuffles, subset and
replay selection) goes through one named generator so that identical seeds
produce identical bytes on every platform:

* state seeding: splitmix64
* stream: xoshiro256** (Blackman & Vigna)
* gaussians: Box-Muller over (0, 1] uniforms

Python integers are masked to 64 bits at each step, so no platform-dependent
overflow behavior is involved.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np

_MASK64 = (1 << 64) - 1


def _splitmix64_next(state: int) -> tuple[int, int]:
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def _token_to_u64(token: int | str) -> int:
    if isinstance(token, int):
        return token & _MASK64
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def derive_seed(seed: int, *tokens: int | str) -> int:
    """Derive a child seed from a root seed and a path of tokens.

    Deterministic and stable across runs and platforms (string tokens are
    hashed with blake2b, never with the salted builtin ``hash``).
    """
    state = seed & _MASK64
    for token in tokens:
        state, out = _splitmix64_next(state ^ _token_to_u64(token))
        state ^= out
    _, out = _splitmix64_next(state)
    return out


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


class Xoshiro256StarStar:
    """xoshiro256** seeded through splitmix64 from a single 64-bit seed."""

    def __init__(self, seed: int):
        state = seed & _MASK64
        s = []
        for _ in range(4):
            state, out = _splitmix64_next(state)
            s.append(out)
        self._s = s

    def next_u64(self) -> int:
        s = self._s
        result = (_rotl((s[1] * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s[1] << 17) & _MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def uniform(self) -> float:
        """Uniform in [0, 1), using the top 53 bits."""
        return (self.next_u64() >> 11) * 2.0**-53

    def uniforms(self, n: int) -> np.ndarray:
        return np.array([self.uniform() for _ in range(n)], dtype=np.float64)

    def normals(self, n: int) -> np.ndarray:
        """n i.i.d. standard normals via Box-Muller."""
        pairs = (n + 1) // 2
        # u1 must avoid 0 for the log; shift the 53-bit integer into (0, 1].
        u1 = np.array(
            [((self.next_u64() >> 11) + 1) * 2.0**-53 for _ in range(pairs)]
        )
        u2 = np.array([(self.next_u64() >> 11) * 2.0**-53 for _ in range(pairs)])
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * math.pi * u2
        out = np.empty(2 * pairs, dtype=np.float64)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return out[:n]

    def randbelow(self, n: int) -> int:
        """Unbiased integer in [0, n) by rejection sampling."""
        if n <= 0:
            raise ValueError("randbelow requires n >= 1")
        limit = (_MASK64 + 1) - ((_MASK64 + 1) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def shuffle(self, items: np.ndarray) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]

    def permutation(self, n: int) -> np.ndarray:
        idx = np.arange(n)
        self.shuffle(idx)
        return idx

    def sample_without_replacement(self, n: int, k: int) -> np.ndarray:
        """k distinct indices from [0, n), in ascending order."""
        if k >= n:
            return np.arange(n)
        # Partial Fisher-Yates: the first k entries form the sample.
        idx = np.arange(n)
        for i in range(k):
            j = i + self.randbelow(n - i)
            idx[i], idx[j] = idx[j], idx[i]
        return np.sort(idx[:k])
