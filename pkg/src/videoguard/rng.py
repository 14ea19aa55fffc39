"""xoshiro256** generator used for every seeded weight in the package.

The stream is fully specified so another implementation can reproduce the
weights bit for bit:

* state: four 64-bit words, filled by four successive SplitMix64 outputs
  starting from the 64-bit seed (increment ``0x9E3779B97F4A7C15``, mixing
  multipliers ``0xBF58476D1CE4E5B9`` and ``0x94D049BB133111EB``, shifts
  30/27/31);
* output: ``rotl(s1 * 5, 7) * 9``, then the usual xoshiro256 state update
  with ``s3 = rotl(s3, 45)`` and ``t = s1 << 17``;
* uniform double in [0, 1): ``(x >> 11) * 2**-53``;
* standard normal: Box-Muller on two uniforms ``u1, u2``,
  ``sqrt(-2 ln(1 - u1)) * cos(2 pi u2)`` (one normal per pair).
"""

import math

import numpy as np

_MASK = (1 << 64) - 1


def _rotl(x, k):
    return ((x << k) | (x >> (64 - k))) & _MASK


def splitmix64(state):
    """Advance a SplitMix64 state; returns ``(new_state, output)``."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return state, z ^ (z >> 31)


class Xoshiro256:
    def __init__(self, seed):
        sm = int(seed) & _MASK
        words = []
        for _ in range(4):
            sm, out = splitmix64(sm)
            words.append(out)
        self.s = words

    def next_u64(self):
        s0, s1, s2, s3 = self.s
        result = (_rotl((s1 * 5) & _MASK, 7) * 9) & _MASK
        t = (s1 << 17) & _MASK
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self.s = [s0, s1, s2, s3]
        return result

    def uniform(self, n):
        """``n`` doubles in [0, 1) as a float64 array."""
        out = np.empty(n, dtype=np.float64)
        scale = 2.0 ** -53
        for i in range(n):
            out[i] = (self.next_u64() >> 11) * scale
        return out

    def normal(self, n):
        u = self.uniform(2 * n)
        u1, u2 = u[0::2], u[1::2]
        return np.sqrt(-2.0 * np.log1p(-u1)) * np.cos(2.0 * math.pi * u2)


def derive_seed(seed, label):
    """Mix a text label into a 64-bit seed (SplitMix64 over UTF-8 bytes)."""
    state = int(seed) & _MASK
    for byte in label.encode("utf-8"):
        state, out = splitmix64(state ^ byte)
        state = out
    return state
