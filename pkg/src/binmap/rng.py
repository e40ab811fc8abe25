"""Deterministic pseudo-random number generation.

Every stochastic piece of the pipeline (world synthesis, observation noise,
weight init, dataset sampling) draws from this generator so that a (seed,
config) pair reproduces byte-identical artifacts on any platform.

The generator is xoshiro256** run over a bank of independent lanes, each lane
seeded through the splitmix64 mixing function.  All state arithmetic is
unsigned 64-bit with wraparound, which numpy evaluates identically everywhere.
"""

from __future__ import annotations

import numpy as np

_U64 = np.uint64
_GOLDEN = _U64(0x9E3779B97F4A7C15)
_MIX1 = _U64(0xBF58476D1CE4E5B9)
_MIX2 = _U64(0x94D049BB133111EB)

# Lane count trades python-loop overhead against wasted tail draws.
_LANES = 256


def _splitmix64(state: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One splitmix64 step. Returns (new_state, output) elementwise."""
    state = state + _GOLDEN
    z = state
    z = (z ^ (z >> _U64(30))) * _MIX1
    z = (z ^ (z >> _U64(27))) * _MIX2
    z = z ^ (z >> _U64(31))
    return state, z


def _rotl(x: np.ndarray, k: int) -> np.ndarray:
    return (x << _U64(k)) | (x >> _U64(64 - k))


class Rng:
    """Reproducible random stream with substream derivation.

    `spawn(key)` derives an independent child stream; distinct keys never
    collide because the child seed is a splitmix64 hash of (seed, key).
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        # Seed LANES independent xoshiro256** states via splitmix64.
        st = (_U64(self.seed) + _GOLDEN * np.arange(4 * _LANES, dtype=_U64)).astype(_U64)
        _, z = _splitmix64(st)
        self._s = [z[i * _LANES:(i + 1) * _LANES].copy() for i in range(4)]
        self._pending: np.ndarray | None = None  # leftover normal draws

    def spawn(self, key: int) -> "Rng":
        k = np.asarray([int(key) & 0xFFFFFFFFFFFFFFFF], dtype=_U64)
        base = _U64(self.seed) ^ (k * _MIX1)
        _, z = _splitmix64(base.astype(_U64))
        return Rng(int(z[0]))

    def _block(self) -> np.ndarray:
        """Advance every lane once; return LANES uint64 outputs."""
        s0, s1, s2, s3 = self._s
        out = _rotl(s1 * _U64(5), 7) * _U64(9)
        t = s1 << _U64(17)
        s2 = s2 ^ s0
        s3 = s3 ^ s1
        s1 = s1 ^ s2
        s0 = s0 ^ s3
        s2 = s2 ^ t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return out

    def next_u64(self, n: int) -> np.ndarray:
        n = int(n)
        blocks = []
        got = 0
        while got < n:
            blocks.append(self._block())
            got += _LANES
        return np.concatenate(blocks)[:n]

    def uniform(self, shape=(), low: float = 0.0, high: float = 1.0) -> np.ndarray:
        n = int(np.prod(shape)) if shape else 1
        u = (self.next_u64(n) >> _U64(11)).astype(np.float64) * (1.0 / (1 << 53))
        out = low + (high - low) * u
        return out.reshape(shape) if shape else float(out[0])

    def normal(self, shape=(), mu: float = 0.0, sigma: float = 1.0) -> np.ndarray:
        n = int(np.prod(shape)) if shape else 1
        out = np.empty(n, dtype=np.float64)
        filled = 0
        if self._pending is not None and self._pending.size:
            take = min(n, self._pending.size)
            out[:take] = self._pending[:take]
            self._pending = self._pending[take:] if take < self._pending.size else None
            filled = take
        while filled < n:
            m = n - filled
            half = (m + 1) // 2
            u1 = np.clip(self.uniform((half,)), 1e-300, None)
            u2 = self.uniform((half,))
            r = np.sqrt(-2.0 * np.log(u1))
            pair = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])
            take = min(m, pair.size)
            out[filled:filled + take] = pair[:take]
            if take < pair.size:
                self._pending = pair[take:]
            filled += take
        res = mu + sigma * out
        return res.reshape(shape) if shape else float(res[0])

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        """Uniform integers in [low, high). Modulo reduction; the bias is
        below 2^-50 for any desk-scale range."""
        span = int(high) - int(low)
        if span <= 0:
            raise ValueError("empty integer range")
        n = int(np.prod(shape)) if shape else 1
        vals = (self.next_u64(n) % _U64(span)).astype(np.int64) + int(low)
        return vals.reshape(shape) if shape else int(vals[0])

    def permutation(self, n: int) -> np.ndarray:
        # Fisher-Yates driven by integers() so the order is platform-fixed.
        idx = np.arange(n)
        for i in range(n - 1, 0, -1):
            j = self.integers(0, i + 1)
            idx[i], idx[j] = idx[j], idx[i]
        return idx
