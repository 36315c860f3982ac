"""Dense complex linear algebra for per-subcarrier MMSE preprocessing.

All matrix routines accept a stack of matrices with shape ``(..., n, n)`` (or
``(..., B, U)`` for channels) and operate on the trailing two axes, so a whole
frame of subcarriers is processed in one call.  Every arithmetic step is
reported to :func:`mmse_lab.counting.active`, which is how the operation
counts of the analysis module are instrumented.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import counting
from .errors import (
    InvalidInputError,
    NotPositiveDefiniteError,
    SingularDiagonalError,
    SingularMatrixError,
)
from .fft import DIRECT_MAX_LENGTH, dft_direct, dft_fast

PIVOT_RTOL = 1e-12


def _batch_size(shape) -> int:
    return int(np.prod(shape, dtype=np.int64))


def _as_square(a, name: str = "matrix") -> np.ndarray:
    a = np.asarray(a, dtype=complex)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise InvalidInputError(f"{name} must be square, got shape {a.shape}")
    if a.shape[-1] == 0:
        raise InvalidInputError(f"{name} has zero dimension")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return a


@lru_cache(maxsize=None)
def _strict_lower(n: int):
    return np.tril_indices(n, -1)


@lru_cache(maxsize=None)
def _lower(n: int):
    return np.tril_indices(n)


@lru_cache(maxsize=None)
def _others(n: int) -> np.ndarray:
    """Row ``i`` lists every index except ``i``."""
    idx = np.arange(n)
    return np.array([np.delete(idx, i) for i in range(n)], dtype=np.intp).reshape(n, n - 1)


def _first_bad(mask: np.ndarray):
    where = np.argwhere(mask)
    return tuple(int(v) for v in where[0]) if len(where) else None


def gram_matrix(h) -> np.ndarray:
    """Return ``H^H H`` for a channel (or stack of channels) of shape ``(..., B, U)``.

    Only the lower triangle is accumulated as a sum of per-antenna outer
    products; the upper triangle is its mirror, so the result is exactly
    Hermitian with a real diagonal.
    """
    h = np.asarray(h, dtype=complex)
    if h.ndim < 2 or h.shape[-1] == 0 or h.shape[-2] == 0:
        raise InvalidInputError(f"channel needs B >= 1 rows and U >= 1 columns, got {h.shape}")
    b, u = h.shape[-2], h.shape[-1]
    batch = _batch_size(h.shape[:-2])
    tally = counting.active()

    diag = np.einsum("...bu,...bu->...u", h.real, h.real) + np.einsum(
        "...bu,...bu->...u", h.imag, h.imag
    )
    tally.abs2(batch * b * u)
    tally.radd(batch * (b - 1) * u)

    g = np.zeros(h.shape[:-2] + (u, u), dtype=complex)
    ii = np.arange(u)
    g[..., ii, ii] = diag
    if u > 1:
        ti, tj = _strict_lower(u)
        off = np.einsum("...bp,...bp->...p", h[..., :, ti].conj(), h[..., :, tj])
        tally.cmul(batch * b * len(ti))
        tally.cadd(batch * (b - 1) * len(ti))
        g[..., ti, tj] = off
        g[..., tj, ti] = off.conj()
    return g


def regularized_gram(g, n0_over_es: float) -> np.ndarray:
    """Return ``G + (N0/Es) I``."""
    g = _as_square(g, "Gram matrix")
    if not np.isfinite(n0_over_es) or n0_over_es < 0:
        raise InvalidInputError(f"regularizer must be finite and >= 0, got {n0_over_es}")
    u = g.shape[-1]
    a = g.copy()
    ii = np.arange(u)
    a[..., ii, ii] += n0_over_es
    counting.active().radd(_batch_size(g.shape[:-2]) * u)
    return a


@dataclass(frozen=True)
class DiagSplit:
    """``A = diag(d) + e`` with real positive ``d`` and hollow Hermitian ``e``."""

    d: np.ndarray
    e: np.ndarray

    @property
    def size(self) -> int:
        return self.d.shape[-1]

    def matrix(self) -> np.ndarray:
        a = self.e.copy()
        ii = np.arange(self.size)
        a[..., ii, ii] = self.d
        return a


def diag_split(a) -> DiagSplit:
    """Split ``A`` into its diagonal ``d`` and hollow part ``e``.

    Raises
    ------
    SingularDiagonalError
        If any diagonal entry is not strictly positive (``D^-1`` undefined).
    """
    a = _as_square(a, "regularized Gram matrix")
    u = a.shape[-1]
    ii = np.arange(u)
    d = a[..., ii, ii].real.copy()
    bad = _first_bad(~(d > 0))
    if bad is not None:
        raise SingularDiagonalError(f"non-positive diagonal entry at index {bad}", index=bad)
    e = a.copy()
    e[..., ii, ii] = 0
    return DiagSplit(d=d, e=e)


def convergence_norm(split: DiagSplit) -> np.ndarray:
    """Frobenius norm of ``D^-1 E``; values below one certify series convergence."""
    scaled = split.e / split.d[..., :, None]
    return np.sqrt(np.sum(scaled.real**2 + scaled.imag**2, axis=(-2, -1)))


def neumann_inverse(split: DiagSplit, terms: int, scale_down: float | None = None) -> np.ndarray:
    """K-term Neumann approximation of ``A^-1``.

    Evaluates ``X_1 = D^-1`` and ``X_k = D^-1 + (-D^-1 E) X_{k-1}``.  Every
    iterate is Hermitian, so only its lower triangle is computed and the upper
    triangle is mirrored.

    Parameters
    ----------
    split : DiagSplit
        Diagonal/hollow split of the regularized Gram matrix.
    terms : int
        Number of series terms ``K >= 1``. ``K = 1`` is the scaled matched filter.
    scale_down : float, optional
        If given (typically ``B``), the recurrence runs on ``A / scale_down`` and
        produces ``scale_down * X_K``, which is rescaled before returning.  This
        mirrors the dynamic-range normalization of a fixed-point datapath and
        does not change the result beyond rounding.
    """
    if int(terms) != terms or terms < 1:
        raise InvalidInputError(f"number of Neumann terms must be >= 1, got {terms}")
    terms = int(terms)
    d, e = split.d, split.e
    if _first_bad(~(d > 0)) is not None:
        raise SingularDiagonalError("non-positive diagonal entry", index=_first_bad(~(d > 0)))
    if scale_down is not None:
        if not scale_down > 0:
            raise InvalidInputError("scale_down must be positive")
        d = d / scale_down
        e = e / scale_down

    u = d.shape[-1]
    batch = _batch_size(d.shape[:-1])
    tally = counting.active()
    ii = np.arange(u)

    dinv = 1.0 / d
    tally.div(batch * u)
    x = np.zeros(d.shape + (u,), dtype=complex)
    x[..., ii, ii] = dinv

    if terms >= 2 and u > 1:
        # phase 2: P = -D^-1 E on the off-diagonal entries
        oi, oj = np.nonzero(~np.eye(u, dtype=bool))
        p = np.zeros_like(x)
        p[..., oi, oj] = -dinv[..., oi] * e[..., oi, oj]
        tally.rcmul(batch * len(oi))

        # phase 3: X_2 = D^-1 + P D^-1, lower triangle only
        ti, tj = _strict_lower(u)
        low = p[..., ti, tj] * dinv[..., tj]
        tally.rcmul(batch * len(ti))
        x[..., ti, tj] = low
        x[..., tj, ti] = low.conj()

        # phase 4: X_k = D^-1 + P X_{k-1}; P has a zero diagonal
        li, lj = _lower(u)
        others = _others(u)[li]
        n_pairs, n_terms = len(li), u - 1
        on_diag = li == lj
        for _ in range(terms - 2):
            acc = np.einsum(
                "...pk,...pk->...p",
                p[..., li[:, None], others],
                x[..., others, lj[:, None]],
            )
            tally.cmul(batch * n_pairs * n_terms)
            tally.cadd(batch * n_pairs * (n_terms - 1))
            acc[..., on_diag] += dinv
            tally.radd(batch * u)
            nxt = np.empty_like(x)
            nxt[..., li, lj] = acc
            nxt[..., lj, li] = acc.conj()
            nxt[..., ii, ii] = acc[..., on_diag].real
            x = nxt

    if scale_down is not None:
        x = x / scale_down
    return x


def _cholesky(a: np.ndarray):
    """Return the Cholesky factor and the reciprocals of its diagonal."""
    n = a.shape[-1]
    batch = _batch_size(a.shape[:-2])
    tally = counting.active()
    ii = np.arange(n)
    diag_a = a[..., ii, ii].real
    threshold = PIVOT_RTOL * np.max(diag_a, axis=-1)

    low = np.zeros_like(a)
    rinv = np.empty(a.shape[:-1])
    for j in range(n):
        row = low[..., j, :j]
        pivot = diag_a[..., j] - np.sum(row.real**2 + row.imag**2, axis=-1)
        if j:
            tally.abs2(batch * j)
            tally.radd(batch * j)  # j-1 to sum, 1 to subtract
        bad = _first_bad(~(pivot > threshold))
        if bad is not None:
            raise NotPositiveDefiniteError(
                f"pivot {j} is not positive at batch index {bad}", index=bad + (j,)
            )
        ljj = np.sqrt(pivot)
        rinv[..., j] = 1.0 / ljj
        tally.div(2 * batch)
        low[..., j, j] = ljj
        rows = n - 1 - j
        if rows:
            col = a[..., j + 1 :, j]
            if j:
                col = col - (low[..., j + 1 :, :j] @ row.conj()[..., None])[..., 0]
                tally.cmul(batch * rows * j)
                tally.cadd(batch * rows * j)  # j-1 to sum, 1 to subtract
            low[..., j + 1 :, j] = col * rinv[..., j, None]
            tally.rcmul(batch * rows)
    return low, rinv


def cholesky_decompose(a) -> np.ndarray:
    """Lower-triangular ``L`` with real positive diagonal and ``L L^H = A``.

    Only the lower triangle of ``A`` is read.  A pivot at or below
    ``1e-12 * max(diag(A))`` raises :class:`NotPositiveDefiniteError`.
    """
    a = _as_square(a)
    return _cholesky(a)[0]


def _check_triangular(low, rhs):
    low = _as_square(low, "triangular factor")
    rhs = np.asarray(rhs, dtype=complex)
    if rhs.shape[-1] != low.shape[-1]:
        raise InvalidInputError(f"dimension mismatch: {low.shape} vs {rhs.shape}")
    n = low.shape[-1]
    diag = low[..., np.arange(n), np.arange(n)]
    if np.any(diag == 0):
        raise SingularMatrixError("triangular factor has a zero diagonal entry")
    return low, rhs, diag


def _forward(low, b, rinv):
    n = low.shape[-1]
    batch = _batch_size(np.broadcast_shapes(low.shape[:-2], b.shape[:-1]))
    tally = counting.active()
    u = np.zeros(np.broadcast_shapes(low.shape[:-1], b.shape), dtype=complex)
    for k in range(n):
        acc = b[..., k]
        if k:
            acc = acc - np.sum(low[..., k, :k] * u[..., :k], axis=-1)
            tally.cmul(batch * k)
            tally.cadd(batch * k)
        u[..., k] = acc * rinv[..., k]
        tally.rcmul(batch)
    return u


def _backward(low, v_rhs, rinv):
    n = low.shape[-1]
    batch = _batch_size(np.broadcast_shapes(low.shape[:-2], v_rhs.shape[:-1]))
    tally = counting.active()
    v = np.zeros(np.broadcast_shapes(low.shape[:-1], v_rhs.shape), dtype=complex)
    for k in range(n - 1, -1, -1):
        acc = v_rhs[..., k]
        m = n - 1 - k
        if m:
            acc = acc - np.sum(low[..., k + 1 :, k].conj() * v[..., k + 1 :], axis=-1)
            tally.cmul(batch * m)
            tally.cadd(batch * m)
        v[..., k] = acc * rinv[..., k]
        tally.rcmul(batch)
    return v


def solve_forward(low, b) -> np.ndarray:
    """Solve ``L u = b`` by forward substitution."""
    low, b, diag = _check_triangular(low, b)
    rinv = 1.0 / diag.real
    counting.active().div(_batch_size(low.shape[:-2]) * low.shape[-1])
    return _forward(low, b, rinv)


def solve_backward(low, u) -> np.ndarray:
    """Solve ``L^H v = u`` by back substitution."""
    low, u, diag = _check_triangular(low, u)
    rinv = 1.0 / diag.real
    counting.active().div(_batch_size(low.shape[:-2]) * low.shape[-1])
    return _backward(low, u, rinv)


def invert_via_cholesky(a) -> np.ndarray:
    """Exact inverse of a Hermitian positive-definite matrix.

    Factor ``A = L L^H``, solve ``L u_i = e_i`` (starting at row ``i``, since
    the leading entries of ``u_i`` vanish), then ``L^H v_i = u_i`` for all
    columns at once; ``A^-1 = [v_1 ... v_U]``.  The assembled inverse is
    symmetrized as ``(X + X^H) / 2``.
    """
    a = _as_square(a)
    n = a.shape[-1]
    batch = _batch_size(a.shape[:-2])
    tally = counting.active()
    low, rinv = _cholesky(a)

    fwd = np.zeros_like(a)
    for i in range(n):
        fwd[..., i, i] = rinv[..., i]
        for k in range(i + 1, n):
            terms = k - i
            acc = np.sum(low[..., k, i:k] * fwd[..., i:k, i], axis=-1)
            tally.cmul(batch * terms)
            tally.cadd(batch * (terms - 1))
            fwd[..., k, i] = -acc * rinv[..., k]
            tally.rcmul(batch)

    inv = np.zeros_like(a)
    for k in range(n - 1, -1, -1):
        acc = fwd[..., k, :]
        m = n - 1 - k
        if m:
            acc = acc - np.einsum("...m,...mc->...c", low[..., k + 1 :, k].conj(), inv[..., k + 1 :, :])
            tally.cmul(batch * m * n)
            tally.cadd(batch * m * n)
        inv[..., k, :] = acc * rinv[..., k, None]
        tally.rcmul(batch * n)

    return 0.5 * (inv + np.conj(np.swapaxes(inv, -1, -2)))


def unitary_transform(v, direction: str = "forward", method: str = "auto") -> np.ndarray:
    """Apply ``F_L`` (forward) or ``F_L^H`` (inverse) along the last axis.

    ``F_L`` is the DFT matrix normalized so that ``F_L^H F_L = I``.  The
    ``auto`` method evaluates lengths up to 64 directly and longer ones with
    the mixed-radix fast transform.
    """
    if direction not in ("forward", "inverse"):
        raise InvalidInputError(f"direction must be 'forward' or 'inverse', got {direction!r}")
    v = np.asarray(v, dtype=complex)
    if v.ndim == 0 or v.shape[-1] == 0:
        raise InvalidInputError("transform length must be >= 1")
    inverse = direction == "inverse"
    if method == "auto":
        method = "direct" if v.shape[-1] <= DIRECT_MAX_LENGTH else "fast"
    if method == "direct":
        return dft_direct(v, inverse)
    if method == "fast":
        return dft_fast(v, inverse)
    raise InvalidInputError(f"unknown transform method {method!r}")
