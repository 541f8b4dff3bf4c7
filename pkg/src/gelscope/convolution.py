"""Discrete (half-)convolutions used by the grid solver.

``full(a, b)[s] = Σ_{i+l=s} a_i b_l`` and ``half(a, b)[s] = Σ_{i<l, i+l=s} a_i b_l``.
Both return arrays of length ``2 * len(a) - 1``.  Small inputs go through
direct sums; large ones through batched real FFTs.  The half convolution
splits the index range recursively: cross pairs between the lower and upper
half of a segment always satisfy ``i < l``, so each recursion level is one
batch of ordinary convolutions, for ``O(N log^2 N)`` work overall.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
import scipy.fft

DIRECT_MAX = 512
_BASE = 32
_EPS = np.finfo(float).eps


def _denoise(out: np.ndarray, a: np.ndarray, b: np.ndarray, m: int) -> np.ndarray:
    # FFT round-off is bounded by ~eps log2(m) |a|_2 |b|_2; anything below that is noise
    floor = 8.0 * _EPS * max(np.log2(m), 1.0) * np.linalg.norm(a) * np.linalg.norm(b)
    out[np.abs(out) < floor] = 0.0
    return out


def full(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    n = a.size
    if n <= DIRECT_MAX:
        return np.convolve(a, b)
    m = scipy.fft.next_fast_len(2 * n - 1, real=True)
    out = scipy.fft.irfft(scipy.fft.rfft(a, m) * scipy.fft.rfft(b, m), m)[: 2 * n - 1]
    return _denoise(out, a, b, m)


@lru_cache(maxsize=8)
def _base_pairs(B: int):
    ii, ll = np.triu_indices(B, k=1)
    S = np.zeros((ii.size, 2 * B - 1))
    S[np.arange(ii.size), ii + ll] = 1.0
    return ii, ll, S


def half(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    n = a.size
    if n == 0:
        return np.zeros(0)
    P = _BASE
    while P < n:
        P *= 2
    A = np.zeros(P)
    Bv = np.zeros(P)
    A[:n] = a
    Bv[:n] = b
    out = np.zeros(4 * P)
    s = P
    while s > _BASE:
        g = P // s
        h = s // 2
        lo = A.reshape(g, s)[:, :h]
        hi = Bv.reshape(g, s)[:, h:]
        if h <= 64 or P <= DIRECT_MAX:
            seg = np.stack([np.convolve(lo[k], hi[k]) for k in range(g)])
        else:
            seg = scipy.fft.irfft(scipy.fft.rfft(lo, s, axis=1) * scipy.fft.rfft(hi, s, axis=1), s, axis=1)[:, : s - 1]
        # segment k lands at offset 2ks + h, length s - 1 < 2s
        view = out[h: h + 2 * s * g].reshape(g, 2 * s)
        view[:, : s - 1] += seg
        s = h
    ii, ll, S = _base_pairs(_BASE)
    g = P // _BASE
    Ab = A.reshape(g, _BASE)
    Bb = Bv.reshape(g, _BASE)
    blocks = (Ab[:, ii] * Bb[:, ll]) @ S
    view = out[: 2 * P].reshape(g, 2 * _BASE)
    view[:, : 2 * _BASE - 1] += blocks
    out = out[: 2 * n - 1]
    if P > 4 * _BASE:
        out = _denoise(out, a, b, P)
    return out
