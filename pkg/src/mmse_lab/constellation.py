"""Gray-mapped LTE constellations and their per-bit max-log demapping tables.

Bits are numbered ``b0, b1, ...`` in transmission order.  For QPSK and QAM the
even bits select the in-phase level and the odd bits the quadrature level; the
mapping follows the LTE modulation tables.  BPSK places both axes on the same
bit: 0 -> (1+j)/sqrt(2), 1 -> -(1+j)/sqrt(2).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import product

import numpy as np

from .errors import InvalidInputError

SUPPORTED_ORDERS = (2, 4, 16, 64)

_NORM = {2: np.sqrt(2.0), 4: np.sqrt(2.0), 16: np.sqrt(10.0), 64: np.sqrt(42.0)}


def bits_per_symbol(m: int) -> int:
    if m not in SUPPORTED_ORDERS:
        raise InvalidInputError(f"constellation size must be one of {SUPPORTED_ORDERS}, got {m}")
    return int(m).bit_length() - 1


def _axis_level(axis_bits: np.ndarray) -> np.ndarray:
    """Unnormalized amplitude on one axis from that axis' bits (MSB first)."""
    sign = 1 - 2 * axis_bits[..., 0].astype(np.int64)
    if axis_bits.shape[-1] == 1:
        return sign
    if axis_bits.shape[-1] == 2:
        return sign * (1 + 2 * axis_bits[..., 1].astype(np.int64))
    inner = (1 - 2 * axis_bits[..., 1].astype(np.int64)) * (1 + 2 * axis_bits[..., 2].astype(np.int64))
    return sign * (4 - inner)


def map_bits(bits, m: int) -> np.ndarray:
    """Map groups of ``log2(m)`` bits on the last axis to unit-energy symbols."""
    q = bits_per_symbol(m)
    bits = np.asarray(bits)
    if bits.shape[-1] != q:
        raise InvalidInputError(f"expected {q} bits per symbol for M={m}, got {bits.shape[-1]}")
    if np.any((bits != 0) & (bits != 1)):
        raise InvalidInputError("bits must be 0 or 1")
    if m == 2:
        level = 1 - 2 * bits[..., 0].astype(np.int64)
        return level * (1 + 1j) / _NORM[2]
    re = _axis_level(bits[..., 0::2])
    im = _axis_level(bits[..., 1::2])
    return (re + 1j * im) / _NORM[m]


@lru_cache(maxsize=None)
def constellation_points(m: int):
    """All ``m`` symbols and their bit labels, indexed by the integer label (b0 is the MSB)."""
    q = bits_per_symbol(m)
    labels = np.array(list(product((0, 1), repeat=q)), dtype=np.uint8)
    points = map_bits(labels, m)
    points.setflags(write=False)
    labels.setflags(write=False)
    return points, labels


@dataclass(frozen=True)
class BitLlrTable:
    """Piecewise-linear max-log metric of one bit along one axis.

    On the interval ``breaks[k-1] <= t < breaks[k]`` the metric
    ``min_{a in S0} (t-a)^2 - min_{a in S1} (t-a)^2`` equals
    ``slope[k] * t + offset[k]``.
    """

    axis: int  # 0 real, 1 imaginary
    breaks: np.ndarray
    slope: np.ndarray
    offset: np.ndarray

    def __call__(self, t: np.ndarray) -> np.ndarray:
        k = np.searchsorted(self.breaks, t, side="right")
        return self.slope[k] * t + self.offset[k]


def _axis_table(levels0: np.ndarray, levels1: np.ndarray, axis: int) -> BitLlrTable:
    levels0 = np.sort(levels0)
    levels1 = np.sort(levels1)
    mids = np.concatenate([(levels0[1:] + levels0[:-1]) / 2, (levels1[1:] + levels1[:-1]) / 2])
    breaks = np.unique(mids)
    # probe each interval to find its nearest 0- and 1-labeled levels
    if len(breaks):
        probes = np.concatenate([[breaks[0] - 1.0], (breaks[1:] + breaks[:-1]) / 2, [breaks[-1] + 1.0]])
    else:
        probes = np.array([0.0])
    p0 = levels0[np.argmin(np.abs(probes[:, None] - levels0[None, :]), axis=1)]
    p1 = levels1[np.argmin(np.abs(probes[:, None] - levels1[None, :]), axis=1)]
    slope = 2.0 * (p1 - p0)
    offset = p0**2 - p1**2
    return BitLlrTable(axis=axis, breaks=breaks, slope=slope, offset=offset)


@lru_cache(maxsize=None)
def llr_tables(m: int) -> tuple:
    """Per-bit piecewise-linear tables; BPSK returns one table per axis for its single bit."""
    q = bits_per_symbol(m)
    points, labels = constellation_points(m)
    if m == 2:
        lv0 = np.array([points[labels[:, 0] == 0].real[0]])
        lv1 = np.array([points[labels[:, 0] == 1].real[0]])
        return ((_axis_table(lv0, lv1, 0), _axis_table(lv0, lv1, 1)),)
    tables = []
    for b in range(q):
        axis = b % 2
        coord = points.real if axis == 0 else points.imag
        lv0 = np.unique(coord[labels[:, b] == 0])
        lv1 = np.unique(coord[labels[:, b] == 1])
        tables.append((_axis_table(lv0, lv1, axis),))
    return tuple(tables)
