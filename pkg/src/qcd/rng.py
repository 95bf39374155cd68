"""Counter-based random streams (Philox4x64-10) addressable by (seed, trial, time).

Every variate is a pure function of ``(master_seed, trial, t)``: the Philox
key is derived from the master seed, and the 256-bit counter is
``(t // 4, trial, 0, 0)``; each block yields the variates for four
consecutive time indices.  Trials therefore never share draws and any
sample can be regenerated without replaying the stream, which is what lets
the Monte Carlo kernels run trials in any order on any number of workers.

Uniforms use the top 53 bits of a word, as numpy does.  Standard normals come
from Box-Muller on word pairs (0, 1) and (2, 3), cosine then sine.
"""

from __future__ import annotations

import functools

import numba as nb
import numpy as np

__all__ = ["philox4x64", "noise_block", "noise_at", "derive_key", "CounterStream", "trial_stream"]

_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)
_LO32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_S11 = np.uint64(11)
_TWO_M53 = 1.0 / 9007199254740992.0
_TWO_PI = 6.283185307179586


@nb.njit(inline="always")
def _mulhilo(a, b):
    alo = a & _LO32
    ahi = a >> _S32
    blo = b & _LO32
    bhi = b >> _S32
    ll = alo * blo
    lh = alo * bhi
    hl = ahi * blo
    hh = ahi * bhi
    cross = (ll >> _S32) + (lh & _LO32) + hl
    hi = hh + (lh >> _S32) + (cross >> _S32)
    return hi, a * b


@nb.njit(nogil=True, cache=True)
def _philox_block(c0, c1, c2, c3, k0, k1):
    for i in range(10):
        hi0, lo0 = _mulhilo(_M0, c0)
        hi1, lo1 = _mulhilo(_M1, c2)
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
        if i < 9:
            k0 = k0 + _W0
            k1 = k1 + _W1
    return c0, c1, c2, c3


def philox4x64(counter, key) -> np.ndarray:
    """One Philox4x64-10 block, for testing against reference implementations."""
    c = [np.uint64(int(v)) for v in counter]
    k = [np.uint64(int(v)) for v in key]
    return np.array(_philox_block(c[0], c[1], c[2], c[3], k[0], k[1]), dtype=np.uint64)


@nb.njit(inline="always")
def _to_unit(w):
    return float(w >> _S11) * _TWO_M53


@nb.njit(nogil=True, cache=True)
def noise_block(normal, k0, k1, trial, block):
    """Four variates for times ``4*block .. 4*block+3`` of ``trial``."""
    w0, w1, w2, w3 = _philox_block(np.uint64(block), np.uint64(trial), np.uint64(0),
                                   np.uint64(0), k0, k1)
    if not normal:
        return _to_unit(w0), _to_unit(w1), _to_unit(w2), _to_unit(w3)
    # Box-Muller on (w0, w1) and (w2, w3); u1 in (0, 1] keeps the log finite
    r0 = np.sqrt(-2.0 * np.log((float(w0 >> _S11) + 1.0) * _TWO_M53))
    a0 = _TWO_PI * _to_unit(w1)
    r1 = np.sqrt(-2.0 * np.log((float(w2 >> _S11) + 1.0) * _TWO_M53))
    a1 = _TWO_PI * _to_unit(w3)
    return r0 * np.cos(a0), r0 * np.sin(a0), r1 * np.cos(a1), r1 * np.sin(a1)


@nb.njit(nogil=True, cache=True)
def noise_at(normal, k0, k1, trial, t):
    """Variate for 0-based time index ``t`` (recomputes its block)."""
    return noise_block(normal, k0, k1, trial, t >> 2)[t & 3]


@nb.njit(nogil=True, cache=True)
def _fill(k0, k1, trial, start, out, normal):
    blk = -1
    vals = (0.0, 0.0, 0.0, 0.0)
    for i in range(out.size):
        t = start + i
        if (t >> 2) != blk:
            blk = t >> 2
            vals = noise_block(normal, k0, k1, trial, blk)
        out[i] = vals[t & 3]


@functools.lru_cache(maxsize=256)
def derive_key(master_seed: int) -> tuple[int, int]:
    """Philox key for a master seed (SeedSequence hashing, so nearby seeds decorrelate)."""
    if master_seed < 0:
        raise ValueError(f"master seed must be nonnegative, got {master_seed}")
    state = np.random.SeedSequence(int(master_seed)).generate_state(2, dtype=np.uint64)
    return int(state[0]), int(state[1])


class CounterStream:
    """Sequential view of one trial's stream with the small Generator API the pairs use."""

    def __init__(self, master_seed: int, trial: int):
        if trial < 0:
            raise ValueError(f"trial index must be nonnegative, got {trial}")
        k0, k1 = derive_key(master_seed)
        self.key = (np.uint64(k0), np.uint64(k1))
        self.trial = int(trial)
        self.position = 0

    def _draw(self, n, out, normal):
        if out is None:
            out = np.empty(n)
        _fill(self.key[0], self.key[1], self.trial, self.position, out, normal)
        self.position += out.size
        return out

    def standard_normal(self, n=None, out=None):
        return self._draw(n, out, True)

    def random(self, n=None, out=None):
        return self._draw(n, out, False)


def trial_stream(master_seed: int, trial: int) -> CounterStream:
    return CounterStream(master_seed, trial)
