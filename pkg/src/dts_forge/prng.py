"""Deterministic small-state PRNG: xoshiro256** seeded via splitmix64.

The generator is fully specified here so streams can be reproduced from the
seed alone, independent of numpy's generator internals:

- splitmix64: state advances by 0x9E3779B97F4A7C15; output mixes with the
  (>>30, *0xBF58476D1CE4E5B9), (>>27, *0x94D049BB133111EB), (>>31) steps.
- xoshiro256**: four 64-bit words initialized from four splitmix64 outputs;
  next() = rotl(s1 * 5, 7) * 9 with the standard state transition.
- doubles: top 53 bits of next(), scaled by 2^-53 (uniform in [0, 1)).
- normals: Box-Muller on consecutive uniform pairs.
"""

from __future__ import annotations

import math

import numpy as np

_MASK = (1 << 64) - 1


def _splitmix64_stream(seed: int, n: int) -> list[int]:
    out = []
    state = seed & _MASK
    for _ in range(n):
        state = (state + 0x9E3779B97F4A7C15) & _MASK
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        out.append(z ^ (z >> 31))
    return out


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK


class Xoshiro256StarStar:
    """Sequential xoshiro256** stream."""

    def __init__(self, seed: int):
        s = _splitmix64_stream(seed, 4)
        # The all-zero state is unreachable from splitmix64 seeding.
        self._s0, self._s1, self._s2, self._s3 = s

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s0, self._s1, self._s2, self._s3
        result = (_rotl((s1 * 5) & _MASK, 7) * 9) & _MASK
        t = (s1 << 17) & _MASK
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s0, self._s1, self._s2, self._s3 = s0, s1, s2, s3
        return result

    def uniform(self, n: int) -> np.ndarray:
        """n doubles uniform in [0, 1)."""
        scale = 2.0 ** -53
        vals = [(self.next_u64() >> 11) * scale for _ in range(n)]
        return np.asarray(vals, dtype=np.float64)

    def normals(self, n: int) -> np.ndarray:
        """n standard normals via Box-Muller."""
        m = (n + 1) // 2
        u1 = self.uniform(m)
        u2 = self.uniform(m)
        # guard log(0); 2^-53 is below any uniform draw's resolution anyway
        r = np.sqrt(-2.0 * np.log(np.maximum(u1, 2.0 ** -60)))
        theta = 2.0 * math.pi * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])
        return z[:n]

    def normal_matrix(self, rows: int, cols: int) -> np.ndarray:
        return self.normals(rows * cols).reshape(rows, cols)

    def on_sphere(self, n: int, dim: int, radius: float) -> np.ndarray:
        """n points uniform on the sphere of the given radius in R^dim."""
        g = self.normal_matrix(n, dim)
        norms = np.linalg.norm(g, axis=1, keepdims=True)
        return radius * g / norms

    def rotation(self, dim: int, spread: float = 1.0) -> np.ndarray:
        """Orthogonal matrix from QR of (I + spread * G).

        spread 0 gives the identity; spread >= 1 approaches a uniformly
        random rotation. The R-diagonal sign fix makes the result unique.
        """
        if spread == 0.0:
            return np.eye(dim)
        g = self.normal_matrix(dim, dim)
        q, r = np.linalg.qr(np.eye(dim) + spread * g)
        return q * np.sign(np.diag(r))
