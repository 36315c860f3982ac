"""Soft-output linear MMSE detection for the SC-FDMA uplink.

Per subcarrier the receiver forms the regularized Gram matrix, inverts it
exactly (Cholesky) or approximately (truncated Neumann series), and equalizes
the matched-filter output.  Per user it then despreads with the inverse DFT,
estimates the effective gain and the noise-plus-interference (NPI) variance,
and emits max-log LLRs.

Sign convention: a positive LLR favours bit 1, and the hard decision is 1
exactly when the LLR is positive.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import linalg
from .constellation import bits_per_symbol, constellation_points, llr_tables
from .errors import (
    DegenerateUserError,
    FrameDetectionError,
    InvalidInputError,
    NotPositiveDefiniteError,
    NumericalConsistencyError,
    SingularDiagonalError,
)
from .txchain import UplinkFrame

METHODS = ("mf", "neumann", "cholesky")
NPI_MODES = ("exact-mmse", "neumann-exact", "k1", "low-complexity")
NPI_ALIASES = {"exact": "exact-mmse", "low": "low-complexity"}

NPI_FLOOR = 1e-12
IMAG_RTOL = 1e-9


@dataclass(frozen=True)
class DetectorConfig:
    """Detector selection.

    ``method="mf"`` is stored as ``neumann`` with one term, since the
    one-term Neumann detector is the row-scaled matched filter.  When
    ``npi_mode`` is omitted it defaults to ``exact-mmse`` for Cholesky and
    ``low-complexity`` otherwise.  ``M`` may be left as ``None`` to take the
    constellation size from the frame.
    """

    method: str = "cholesky"
    terms: int | None = None
    npi_mode: str | None = None
    M: int | None = None

    def __post_init__(self):
        method = self.method
        if method not in METHODS:
            raise InvalidInputError(f"method must be one of {METHODS}, got {method!r}")
        terms = self.terms
        if method == "mf":
            if terms not in (None, 1):
                raise InvalidInputError("the matched filter uses exactly one term")
            method, terms = "neumann", 1
        elif method == "neumann":
            if terms is None or int(terms) != terms or terms < 1:
                raise InvalidInputError(f"Neumann detector needs terms >= 1, got {terms}")
            terms = int(terms)
        else:
            if terms is not None:
                raise InvalidInputError("terms only applies to the Neumann detector")
        npi = NPI_ALIASES.get(self.npi_mode, self.npi_mode)
        if npi is None:
            npi = "exact-mmse" if method == "cholesky" else "low-complexity"
        if npi not in NPI_MODES:
            raise InvalidInputError(f"npi_mode must be one of {NPI_MODES}, got {self.npi_mode!r}")
        if npi == "exact-mmse" and method != "cholesky":
            raise InvalidInputError("exact-mmse NPI requires the exact (cholesky) inverse")
        if self.M is not None:
            bits_per_symbol(self.M)
        object.__setattr__(self, "method", method)
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "npi_mode", npi)

    @classmethod
    def parse(cls, text: str, npi_mode: str | None = None, M: int | None = None) -> "DetectorConfig":
        """Build from a label such as ``"mf"``, ``"neumann:3"`` or ``"cholesky"``."""
        name, _, arg = text.strip().lower().partition(":")
        if name == "neumann":
            try:
                terms = int(arg)
            except ValueError:
                raise InvalidInputError(f"cannot parse Neumann term count in {text!r}") from None
            return cls("neumann", terms, npi_mode, M)
        if arg:
            raise InvalidInputError(f"unexpected argument in detector label {text!r}")
        return cls(name, None, npi_mode, M)

    @property
    def label(self) -> str:
        if self.method == "cholesky":
            return "cholesky"
        return "mf" if self.terms == 1 else f"neumann:{self.terms}"


@dataclass(frozen=True)
class PostEqStats:
    """Per-user effective gain, NPI variance and SINR."""

    mu: np.ndarray
    npi: np.ndarray
    sinr: np.ndarray | None = None


@dataclass(frozen=True)
class LlrFrame:
    """Max-log LLRs of shape (U, L, log2 M) and the matching hard decisions."""

    llrs: np.ndarray
    hard_bits: np.ndarray = field(init=False)

    def __post_init__(self):
        if not np.all(np.isfinite(self.llrs)):
            raise NumericalConsistencyError("non-finite LLR")
        object.__setattr__(self, "hard_bits", (self.llrs > 0).astype(np.uint8))


def matched_filter(h, y) -> np.ndarray:
    """``H^H y`` for channels ``(..., B, U)`` and received vectors ``(..., B)``."""
    h = np.asarray(h, dtype=complex)
    y = np.asarray(y, dtype=complex)
    if h.ndim < 2 or y.shape[-1] != h.shape[-2]:
        raise InvalidInputError(f"received vector length {y.shape[-1:]} does not match B of {h.shape}")
    return np.einsum("...bu,...b->...u", h.conj(), y)


def equalize(a_inv, y_mf) -> np.ndarray:
    """Apply (approximate) inverses ``(..., U, U)`` to matched-filter outputs ``(..., U)``."""
    a_inv = np.asarray(a_inv, dtype=complex)
    y_mf = np.asarray(y_mf, dtype=complex)
    if a_inv.ndim < 2 or a_inv.shape[-1] != a_inv.shape[-2] or y_mf.shape[-1] != a_inv.shape[-1]:
        raise InvalidInputError(f"cannot equalize {y_mf.shape} with inverse of shape {a_inv.shape}")
    return np.einsum("...ij,...j->...i", a_inv, y_mf)


def _real_checked(values: np.ndarray, what: str) -> np.ndarray:
    bad = np.abs(values.imag) > IMAG_RTOL * np.abs(values.real)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise NumericalConsistencyError(
            f"{what} of user {i} has imaginary part {values.imag.flat[i]:.3e} "
            f"against real part {values.real.flat[i]:.3e}"
        )
    return values.real.copy()


def gain_from_gram(a_inv, gram) -> np.ndarray:
    """Effective gain ``(1/L) sum_w [A_w^-1 G_w]_ii`` from stacked inverses and Gram matrices."""
    a_inv = np.asarray(a_inv, dtype=complex)
    gram = np.asarray(gram, dtype=complex)
    if a_inv.ndim == 2:
        a_inv, gram = a_inv[None], gram[None]
    if a_inv.shape != gram.shape:
        raise InvalidInputError(f"shape mismatch {a_inv.shape} vs {gram.shape}")
    per_sc = np.einsum("wik,wki->wi", a_inv, gram)
    return _real_checked(per_sc.mean(axis=0), "effective gain")


def effective_gain(a_inv, channels) -> np.ndarray:
    """Per-user effective channel gain after equalization.

    Parameters
    ----------
    a_inv : array_like, shape (L, U, U)
        Exact or approximate inverses, one per subcarrier.
    channels : array_like, shape (L, B, U)

    Returns
    -------
    numpy.ndarray, shape (U,)
        ``mu_i = (1/L) sum_w [A_w^-1 H_w^H H_w]_ii``.

    Raises
    ------
    NumericalConsistencyError
        If an averaged gain has ``|Im| > 1e-9 |Re|``.
    """
    channels = np.asarray(channels, dtype=complex)
    if channels.ndim == 2:
        channels = channels[None]
    return gain_from_gram(a_inv, linalg.gram_matrix(channels))


def _check_users(diag_g: np.ndarray) -> None:
    zero = np.argwhere(diag_g <= 0)
    if len(zero):
        w, i = (int(v) for v in zero[0])
        raise DegenerateUserError(f"user {i} has an all-zero channel on subcarrier {w}", user=i, subcarrier=w)


def npi_variance(mode: str, es: float = 1.0, *, mu=None, a_inv=None, a=None, g=None, d=None) -> np.ndarray:
    """Post-equalization noise-plus-interference variance per user.

    Parameters
    ----------
    mode : str
        ``exact-mmse``: ``Es mu - Es mu^2`` (needs ``mu`` from the exact inverse).
        ``neumann-exact``: ``Es (1/L) sum_w [A~ A G A~]_ii - Es mu^2``
        (needs ``mu``, ``a_inv``, ``a``, ``g``).
        ``k1``: ``Es (1/L) sum_w [A G]_ii / d_i^2 - Es mu1^2`` (needs ``a``, ``g``, ``d``).
        ``low-complexity``: ``Es (1/L) sum_w g_ii / d_i - Es mu1^2`` (needs ``g``, ``d``).
        Here ``mu1`` is the one-term gain ``(1/L) sum_w g_ii / d_i``.
    es : float
        Average symbol energy.
    mu, a_inv, a, g, d : array_like
        Per-subcarrier inputs stacked on the first axis.

    Returns
    -------
    numpy.ndarray
        Variances clamped from below at ``1e-12 * Es``.
    """
    mode = NPI_ALIASES.get(mode, mode)
    if mode not in NPI_MODES:
        raise InvalidInputError(f"unknown NPI mode {mode!r}")

    def need(**kw):
        missing = [k for k, v in kw.items() if v is None]
        if missing:
            raise InvalidInputError(f"NPI mode {mode} needs {', '.join(missing)}")
        return [np.asarray(v) for v in kw.values()]

    if g is not None:
        g = np.asarray(g)
        if g.ndim == 2:
            g = g[None]
        _check_users(np.einsum("wii->wi", g).real)
    if a is not None and np.ndim(a) == 2:
        a = np.asarray(a)[None]
    if a_inv is not None and np.ndim(a_inv) == 2:
        a_inv = np.asarray(a_inv)[None]
    if d is not None and np.ndim(d) == 1:
        d = np.asarray(d)[None]

    if mode == "exact-mmse":
        (mu,) = need(mu=mu)
        npi = es * mu - es * mu**2
    elif mode == "neumann-exact":
        mu, a_inv, a, g = need(mu=mu, a_inv=a_inv, a=a, g=g)
        quad = np.einsum("wij,wjk,wkl,wli->wi", a_inv, a, g, a_inv).real
        npi = es * quad.mean(axis=0) - es * mu**2
    else:
        g, d = need(g=g, d=d)
        diag_g = np.einsum("wii->wi", g).real
        mu1 = (diag_g / d).mean(axis=0)
        if mode == "k1":
            (a,) = need(a=a)
            ag = np.einsum("wik,wki->wi", a, g).real
            npi = es * (ag / d**2).mean(axis=0) - es * mu1**2
        else:
            npi = es * mu1 - es * mu1**2
    return np.maximum(npi, NPI_FLOOR * es)


def post_eq_sinr(stats: PostEqStats) -> PostEqStats:
    """Return ``stats`` with ``sinr = mu^2 / npi``."""
    npi = np.asarray(stats.npi, dtype=float)
    if np.any(~(npi > 0)):
        i = int(np.argmax(~(npi > 0)))
        raise DegenerateUserError(f"NPI of user {i} is not positive", user=i)
    mu = np.asarray(stats.mu, dtype=float)
    return replace(stats, sinr=mu**2 / npi)


def _check_llr_args(mu, sinr):
    if np.any(~(np.asarray(mu) > 0)):
        raise InvalidInputError("effective gain must be positive")
    if np.any(~(np.asarray(sinr) >= 0)):
        raise InvalidInputError("SINR must be non-negative")


def llr_maxlog(x_hat, mu, sinr, M: int) -> np.ndarray:
    """Max-log LLRs through the piecewise-linear per-bit metric.

    ``L(b) = sinr * (min_{a: b=0} |z - a|^2 - min_{a: b=1} |z - a|^2)`` with
    ``z = x_hat / mu``.  Inputs broadcast; the bit index is appended as the
    last axis.
    """
    tables = llr_tables(M)
    _check_llr_args(mu, sinr)
    z = np.asarray(x_hat, dtype=complex) / mu
    sinr = np.asarray(sinr, dtype=float)
    out = np.empty(np.broadcast_shapes(z.shape, sinr.shape) + (len(tables),))
    for b, parts in enumerate(tables):
        metric = sum(t(z.real if t.axis == 0 else z.imag) for t in parts)
        out[..., b] = sinr * metric
    return out


def llr_maxlog_exhaustive(x_hat, mu, sinr, M: int) -> np.ndarray:
    """Same as :func:`llr_maxlog` but minimizing over every constellation point."""
    points, labels = constellation_points(M)
    _check_llr_args(mu, sinr)
    z = np.asarray(x_hat, dtype=complex) / mu
    dist = np.abs(z[..., None] - points) ** 2
    out = np.empty(z.shape + (labels.shape[1],))
    for b in range(labels.shape[1]):
        out[..., b] = dist[..., labels[:, b] == 0].min(axis=-1) - dist[..., labels[:, b] == 1].min(axis=-1)
    return np.asarray(sinr)[..., None] * out


@dataclass(frozen=True)
class Preprocessed:
    """Per-subcarrier quantities shared by equalization and NPI estimation."""

    gram: np.ndarray
    a: np.ndarray
    split: linalg.DiagSplit
    a_inv: np.ndarray


def preprocess(det: DetectorConfig, channels, n0_over_es: float) -> Preprocessed:
    """Gram, regularization and (approximate) inversion for every subcarrier."""
    g = linalg.gram_matrix(channels)
    _check_users(np.einsum("...ii->...i", g).real.reshape(-1, g.shape[-1]))
    a = linalg.regularized_gram(g, n0_over_es)
    try:
        split = linalg.diag_split(a)
        if det.method == "cholesky":
            a_inv = linalg.invert_via_cholesky(a)
        else:
            a_inv = linalg.neumann_inverse(split, det.terms)
    except (SingularDiagonalError, NotPositiveDefiniteError) as exc:
        w = exc.index[0] if exc.index else None
        raise FrameDetectionError(f"preprocessing failed on subcarrier {w}: {exc}", subcarrier=w) from exc
    return Preprocessed(gram=g, a=a, split=split, a_inv=a_inv)


def _stats(det: DetectorConfig, pre: Preprocessed, es: float) -> PostEqStats:
    mu = gain_from_gram(pre.a_inv, pre.gram)
    npi = npi_variance(det.npi_mode, es, mu=mu, a_inv=pre.a_inv, a=pre.a, g=pre.gram, d=pre.split.d)
    return post_eq_sinr(PostEqStats(mu=mu, npi=npi))


def _resolve_order(det: DetectorConfig, frame: UplinkFrame) -> int:
    if det.M is not None and det.M != frame.M:
        raise InvalidInputError(f"detector expects M={det.M} but the frame carries M={frame.M}")
    return frame.M


def detect_frame(det: DetectorConfig, frame: UplinkFrame):
    """Detect one frame.

    Returns
    -------
    (LlrFrame, PostEqStats)

    Raises
    ------
    FrameDetectionError
        If a subcarrier's regularized Gram matrix cannot be inverted.
    DegenerateUserError
        If a user's channel column is identically zero on some subcarrier.
    """
    M = _resolve_order(det, frame)
    pre = preprocess(det, frame.channels, frame.n0 / frame.es)
    s_hat = equalize(pre.a_inv, matched_filter(frame.channels, frame.y))
    stats = _stats(det, pre, frame.es)
    x_hat = linalg.unitary_transform(s_hat.T, "inverse")
    llrs = llr_maxlog(x_hat, stats.mu[:, None], stats.sinr[:, None], M)
    return LlrFrame(llrs), stats
