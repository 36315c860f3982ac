"""Fixed-point model of the detection datapath.

Every stage boundary rounds to nearest (ties to even) and saturates to a
signed two's-complement format.  The channel Gram matrix is formed on the
scaled-down problem ``A / B`` so that its diagonal sits near one, and every
reciprocal goes through a lookup table indexed by the mantissa of its
argument.

Arithmetic inside a stage (sums of products, the inverse DFT) runs in double
precision; only the values written out at each boundary are quantized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import linalg
from .detector import (
    DetectorConfig,
    LlrFrame,
    _resolve_order,
    llr_maxlog,
    matched_filter,
)
from .errors import DegenerateUserError, InvalidInputError, RangeError
from .txchain import UplinkFrame


@dataclass(frozen=True)
class FixedFormat:
    """Signed fixed-point format with ``word_bits`` total bits, ``frac_bits`` after the point."""

    word_bits: int
    frac_bits: int
    signed: bool = True

    def __post_init__(self):
        if not (1 <= self.frac_bits < self.word_bits <= 32):
            raise InvalidInputError(f"need 1 <= frac_bits < word_bits <= 32, got {self}")
        if not self.signed:
            raise InvalidInputError("only signed formats are modeled")

    @property
    def lsb(self) -> float:
        return 2.0**-self.frac_bits

    @property
    def max_value(self) -> float:
        return 2.0 ** (self.word_bits - 1 - self.frac_bits) - self.lsb

    @property
    def min_value(self) -> float:
        return -(2.0 ** (self.word_bits - 1 - self.frac_bits))


def _quantize_real(v: np.ndarray, fmt: FixedFormat) -> np.ndarray:
    scale = 2.0**fmt.frac_bits
    top = 2.0 ** (fmt.word_bits - 1)
    return np.clip(np.round(v * scale), -top, top - 1) / scale


def quantize(v, fmt: FixedFormat):
    """Round to the nearest multiple of ``2**-frac_bits`` (ties to even) and saturate.

    Complex inputs are quantized per component.

    Examples
    --------
    >>> quantize(0.6, FixedFormat(4, 2))
    0.5
    >>> quantize(10, FixedFormat(4, 2))
    1.75
    """
    arr = np.asarray(v)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("cannot quantize NaN or infinite values")
    if np.iscomplexobj(arr):
        out = _quantize_real(arr.real, fmt) + 1j * _quantize_real(arr.imag, fmt)
    else:
        out = _quantize_real(arr.astype(float), fmt)
    return out.item() if np.ndim(v) == 0 else out


@dataclass(frozen=True)
class FxpPipelineConfig:
    """Word lengths of each datapath stage.

    ``sinr_fmt`` covers the post-equalization SINR register, which needs more
    integer bits than the data path.  ``lut_range`` is the input interval the
    reciprocal table accepts directly.
    """

    input_fmt: FixedFormat = FixedFormat(15, 12)
    mac_fmt: FixedFormat = FixedFormat(22, 19)
    equalizer_out_fmt: FixedFormat = FixedFormat(12, 9)
    sinr_fmt: FixedFormat = FixedFormat(12, 3)
    llr_fmt: FixedFormat = FixedFormat(8, 1)
    recip_lut_addr_bits: int = 10
    recip_lut_out_bits: int = 12
    lut_range: tuple = (0.25, 4.0)

    def __post_init__(self):
        if not 1 <= self.recip_lut_addr_bits <= 24:
            raise InvalidInputError("LUT address width must be within 1..24 bits")
        if not 2 <= self.recip_lut_out_bits <= 32:
            raise InvalidInputError("LUT output width must be within 2..32 bits")
        lo, hi = self.lut_range
        if not 0 < lo < hi:
            raise InvalidInputError(f"invalid LUT range {self.lut_range}")

    @classmethod
    def hardware(cls) -> "FxpPipelineConfig":
        """15-bit inputs, 22-bit accumulators, 12-bit equalizer output, 8-bit LLRs, 1024 x 12-bit LUT."""
        return cls()

    @classmethod
    def widened(cls, word: int = 30) -> "FxpPipelineConfig":
        """Every stage widened to ``word`` bits for convergence checks against floating point."""
        data = FixedFormat(word, word - 6)
        wide = FixedFormat(word, word - 10)
        return cls(
            input_fmt=data,
            mac_fmt=data,
            equalizer_out_fmt=data,
            sinr_fmt=wide,
            llr_fmt=wide,
            recip_lut_addr_bits=min(word - 10, 24),
            recip_lut_out_bits=word,
        )


@lru_cache(maxsize=8)
def _lut_table(addr_bits: int, out_bits: int) -> np.ndarray:
    k = np.arange(2**addr_bits)
    frac = out_bits - 1
    table = np.round((1.0 / (1.0 + k / 2.0**addr_bits)) * 2.0**frac) / 2.0**frac
    table.setflags(write=False)
    return table


def reciprocal_lut(d, cfg: FxpPipelineConfig):
    """Table-based ``1/d`` for ``d`` inside ``cfg.lut_range``.

    ``d`` is split as ``m * 2**e`` with mantissa ``m`` in ``[1, 2)``.  The top
    ``recip_lut_addr_bits`` fraction bits of ``m`` (rounded) address a table of
    ``1/m`` stored with ``recip_lut_out_bits - 1`` fractional bits; the
    exponent is applied by a shift.  With the default 1024 x 12-bit table the
    relative error stays below 0.1 %.

    Raises
    ------
    RangeError
        If any ``d`` lies outside ``cfg.lut_range``.
    """
    arr = np.asarray(d, dtype=float)
    lo, hi = cfg.lut_range
    if not np.all((arr >= lo) & (arr < hi)):
        raise RangeError(f"reciprocal input outside [{lo}, {hi})", stage="reciprocal")
    mant, expo = np.frexp(arr)
    mant, expo = 2.0 * mant, expo - 1
    size = 2**cfg.recip_lut_addr_bits
    addr = np.round((mant - 1.0) * size).astype(np.int64)
    wrap = addr == size
    addr = np.where(wrap, 0, addr)
    expo = expo + wrap
    out = _lut_table(cfg.recip_lut_addr_bits, cfg.recip_lut_out_bits)[addr] * np.ldexp(1.0, -expo)
    return out.item() if np.ndim(d) == 0 else out


def _shifted_reciprocal(x: np.ndarray, cfg: FxpPipelineConfig, stage: str) -> np.ndarray:
    """Reciprocal of arbitrary positive values: shift into [1, 2), look up, shift back."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x) & (x > 0)):
        raise RangeError(f"{stage}: reciprocal of a non-positive value", stage=stage)
    _, expo = np.frexp(x)
    shift = expo - 1
    return reciprocal_lut(np.ldexp(x, -shift), cfg) * np.ldexp(1.0, -shift)


def _table_reciprocal(x: np.ndarray, cfg: FxpPipelineConfig, stage: str) -> np.ndarray:
    """Reciprocal of values that the scale-down already places in the table range."""
    try:
        return reciprocal_lut(x, cfg)
    except RangeError as exc:
        raise RangeError(f"{stage}: {exc}", stage=stage) from None


def _hermitian_from_lower(x: np.ndarray) -> np.ndarray:
    low = np.tril(x, -1)
    diag = np.einsum("...ii->...i", x).real
    out = low + np.conj(np.swapaxes(low, -1, -2))
    idx = np.arange(x.shape[-1])
    out[..., idx, idx] = diag
    return out


def _neumann_fxp(a, terms: int, cfg: FxpPipelineConfig) -> np.ndarray:
    """Neumann recurrence on the scaled problem; returns ``B * A~_K`` in the accumulator format."""
    qm = cfg.mac_fmt
    u = a.shape[-1]
    idx = np.arange(u)
    d = a[..., idx, idx].real
    dinv = quantize(_table_reciprocal(d, cfg, "neumann-diagonal"), qm)
    e = a.copy()
    e[..., idx, idx] = 0
    p = quantize(-dinv[..., :, None] * e, qm)
    dmat = np.zeros_like(a)
    dmat[..., idx, idx] = dinv
    x = dmat
    for _ in range(terms - 1):
        x = _hermitian_from_lower(quantize(dmat + p @ x, qm))
    return x


def _cholesky_fxp(a, cfg: FxpPipelineConfig) -> np.ndarray:
    """Cholesky-based inverse of the scaled problem with every stored value quantized."""
    qm = cfg.mac_fmt
    n = a.shape[-1]
    low = np.zeros_like(a)
    rinv = np.empty(a.shape[:-1])
    for j in range(n):
        row = low[..., j, :j]
        pivot = a[..., j, j].real - np.sum(row.real**2 + row.imag**2, axis=-1)
        if np.any(~(pivot > 0)):
            raise RangeError(f"non-positive pivot in column {j}", stage="cholesky")
        ljj = quantize(np.sqrt(pivot), qm)
        low[..., j, j] = ljj
        rinv[..., j] = quantize(_table_reciprocal(ljj, cfg, "cholesky-pivot"), qm)
        if j < n - 1:
            col = a[..., j + 1 :, j] - (low[..., j + 1 :, :j] @ row.conj()[..., None])[..., 0]
            low[..., j + 1 :, j] = quantize(col * rinv[..., j, None], qm)

    fwd = np.zeros_like(a)
    for i in range(n):
        fwd[..., i, i] = rinv[..., i]
        for k in range(i + 1, n):
            acc = np.sum(low[..., k, i:k] * fwd[..., i:k, i], axis=-1)
            fwd[..., k, i] = quantize(-acc * rinv[..., k], qm)

    inv = np.zeros_like(a)
    for k in range(n - 1, -1, -1):
        acc = fwd[..., k, :] - np.einsum("...m,...mc->...c", low[..., k + 1 :, k].conj(), inv[..., k + 1 :, :])
        inv[..., k, :] = quantize(acc * rinv[..., k, None], qm)
    return quantize(0.5 * (inv + np.conj(np.swapaxes(inv, -1, -2))), qm)


def _agc_gain(frame: UplinkFrame) -> float:
    """Power-of-two input gain that keeps received samples at unit scale."""
    return 2.0 ** -math.ceil(math.log2(math.sqrt(frame.U * frame.es + frame.n0)))


def fxp_detect_frame(cfg: FxpPipelineConfig, det: DetectorConfig, frame: UplinkFrame) -> LlrFrame:
    """Fixed-point counterpart of :func:`mmse_lab.detector.detect_frame`.

    Stages and their formats:

    * received samples (after a power-of-two gain) and channel: ``input_fmt``
    * ``G / B``, ``A / B``, ``B * A~``, ``H^H y / B``, gains and NPI: ``mac_fmt``
    * equalized symbols, despread symbols and demapper input: ``equalizer_out_fmt``
    * SINR: ``sinr_fmt``; LLRs: ``llr_fmt``

    Diagonal entries of ``A / B`` and Cholesky pivots go straight into the
    reciprocal table, so a channel whose per-user energy is far from ``B``
    raises :class:`RangeError` naming the stage.  The NPI and the gain are
    shifted into the table range by a power of two first.
    """
    M = _resolve_order(det, frame)
    qi, qm, qe = cfg.input_fmt, cfg.mac_fmt, cfg.equalizer_out_fmt
    U, B = frame.U, frame.B
    es = frame.es
    idx = np.arange(U)

    agc = _agc_gain(frame)
    h = quantize(frame.channels, qi)
    y = quantize(agc * frame.y, qi)

    g = quantize(linalg.gram_matrix(h) / B, qm)
    diag_g = g[:, idx, idx].real
    if np.any(diag_g <= 0):
        w, i = (int(v) for v in np.argwhere(diag_g <= 0)[0])
        raise DegenerateUserError(f"user {i} has no channel energy on subcarrier {w}", user=i, subcarrier=w)
    a = g.copy()
    a[:, idx, idx] += quantize(frame.n0 / (es * B), qm)
    a = quantize(a, qm)

    if det.method == "cholesky":
        a_inv = _cholesky_fxp(a, cfg)
    else:
        a_inv = _neumann_fxp(a, det.terms, cfg)

    y_mf = quantize(matched_filter(h, y) / B, qm)
    s_hat = quantize(np.einsum("wij,wj->wi", a_inv, y_mf), qe)

    mu = quantize(np.einsum("wik,wki->wi", a_inv, g).real.mean(axis=0), qm)
    if np.any(mu <= 0):
        raise RangeError("non-positive effective gain", stage="gain")
    d = a[:, idx, idx].real
    mode = det.npi_mode
    if mode == "exact-mmse":
        npi = es * mu - es * mu**2
    elif mode == "neumann-exact":
        quad = np.einsum("wij,wjk,wkl,wli->wi", a_inv, a, g, a_inv).real
        npi = es * quad.mean(axis=0) - es * mu**2
    else:
        dinv = quantize(_table_reciprocal(d, cfg, "npi-diagonal"), qm)
        mu1 = (diag_g * dinv).mean(axis=0)
        if mode == "k1":
            ag = np.einsum("wik,wki->wi", a, g).real
            npi = es * (ag * dinv**2).mean(axis=0) - es * mu1**2
        else:
            npi = es * mu1 - es * mu1**2
    npi = np.maximum(quantize(npi, qm), qm.lsb)
    sinr = quantize(mu**2 * _shifted_reciprocal(npi, cfg, "npi"), cfg.sinr_fmt)

    x_hat = quantize(linalg.unitary_transform(s_hat.T, "inverse"), qe)
    inv_gain = _shifted_reciprocal(mu * agc, cfg, "gain")
    z = quantize(x_hat * inv_gain[:, None], qe)
    llrs = quantize(llr_maxlog(z, 1.0, sinr[:, None], M), cfg.llr_fmt)
    return LlrFrame(llrs)
