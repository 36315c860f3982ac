"""Unitary discrete Fourier transform along the last axis.

Two evaluation paths are provided: a direct O(L^2) matrix-vector product and a
recursive mixed-radix decimation-in-time transform.  The fast path splits off
the smallest prime factor at each level, so lengths built from 2, 3 and 5 (LTE
uses 1200 = 2^4 * 3 * 5^2) reduce to radix-2/3/5 butterflies.  Any remaining
prime factor is handled with a direct DFT of that size.
"""

from functools import lru_cache

import numpy as np

DIRECT_MAX_LENGTH = 64


def _smallest_prime_factor(n: int) -> int:
    if n % 2 == 0:
        return 2
    f = 3
    while f * f <= n:
        if n % f == 0:
            return f
        f += 2
    return n


@lru_cache(maxsize=64)
def _dft_matrix(n: int, sign: int) -> np.ndarray:
    k = np.arange(n)
    # exact integer phase reduction keeps large-n twiddles accurate
    phase = (np.outer(k, k) % n) * (sign * 2.0 * np.pi / n)
    mat = np.exp(1j * phase)
    mat.setflags(write=False)
    return mat


@lru_cache(maxsize=64)
def _twiddles(n: int, p: int, sign: int) -> np.ndarray:
    m = n // p
    r = np.arange(p)[:, None]
    k = np.arange(m)[None, :]
    tw = np.exp(1j * (sign * 2.0 * np.pi / n) * (r * k))
    tw.setflags(write=False)
    return tw


def _fft_unnormalized(x: np.ndarray, sign: int) -> np.ndarray:
    n = x.shape[-1]
    if n == 1:
        return x.copy()
    p = _smallest_prime_factor(n)
    if p == n:
        return x @ _dft_matrix(n, sign).T
    m = n // p
    # x[..., r::p] for r = 0..p-1, stacked on axis -2
    decimated = np.swapaxes(x.reshape(x.shape[:-1] + (m, p)), -1, -2)
    sub = _fft_unnormalized(decimated, sign) * _twiddles(n, p, sign)
    out = np.einsum("qr,...rk->...qk", _dft_matrix(p, sign), sub)
    return out.reshape(x.shape)


def dft_direct(x, inverse: bool = False) -> np.ndarray:
    """Unitary DFT by explicit multiplication with the L x L transform matrix."""
    x = np.asarray(x, dtype=complex)
    n = x.shape[-1]
    sign = 1 if inverse else -1
    return (x @ _dft_matrix(n, sign).T) / np.sqrt(n)


def dft_fast(x, inverse: bool = False) -> np.ndarray:
    """Unitary DFT through the recursive mixed-radix factorization."""
    x = np.asarray(x, dtype=complex)
    n = x.shape[-1]
    sign = 1 if inverse else -1
    return _fft_unnormalized(x, sign) / np.sqrt(n)
