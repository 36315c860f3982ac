"""SC-FDMA uplink transmit chain and i.i.d. Rayleigh block-fading channel.

Each user Gray-maps its bits to ``L`` time-domain symbols, spreads them with
the unitary DFT, and transmits subcarrier ``w`` through ``H_w`` (``B x U``)
with additive white Gaussian noise of variance ``N0`` per complex entry.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .constellation import bits_per_symbol, map_bits
from .errors import InvalidInputError
from .linalg import unitary_transform

CHANNEL_MODELS = ("rayleigh", "identity")


@dataclass(frozen=True)
class SimConfig:
    """Link-level simulation parameters.

    Attributes
    ----------
    B, U, L : int
        Base-station antennas, users and subcarriers.
    M : int
        Constellation size, one of 2, 4, 16, 64.
    Es : float
        Average symbol energy.
    snr_db : float
        ``10 log10(B Es / N0)``.
    seed : int
        Base seed; trial ``t`` uses the substream ``(seed, t)``.
    trials : int
        Frames per SNR point.
    channel : str
        ``"rayleigh"`` for i.i.d. CN(0, 1) entries, ``"identity"`` for
        ``H_w = [I_U; 0]`` (test hook).
    noiseless : bool
        Force ``N0 = 0`` (test hook).
    """

    B: int = 64
    U: int = 4
    L: int = 72
    M: int = 64
    Es: float = 1.0
    snr_db: float = 20.0
    seed: int = 0
    trials: int = 100
    channel: str = "rayleigh"
    noiseless: bool = False

    def __post_init__(self):
        if not (1 <= self.U <= self.B):
            raise InvalidInputError(f"need 1 <= U <= B, got U={self.U}, B={self.B}")
        if self.L < 1:
            raise InvalidInputError(f"need L >= 1, got {self.L}")
        bits_per_symbol(self.M)
        if self.trials < 1:
            raise InvalidInputError(f"need trials >= 1, got {self.trials}")
        if not self.Es > 0:
            raise InvalidInputError(f"need Es > 0, got {self.Es}")
        if self.channel not in CHANNEL_MODELS:
            raise InvalidInputError(f"channel must be one of {CHANNEL_MODELS}, got {self.channel!r}")
        if not 0 <= self.seed < 2**64:
            raise InvalidInputError("seed must fit in 64 unsigned bits")

    @property
    def bits_per_symbol(self) -> int:
        return bits_per_symbol(self.M)

    @property
    def n0(self) -> float:
        return 0.0 if self.noiseless else snr_to_n0(self.snr_db, self.B, self.Es)

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class UplinkFrame:
    """One SC-FDMA symbol as seen by the receiver, with its ground truth.

    Shapes: ``bits`` (U, L, log2 M), ``x`` and ``s`` (U, L),
    ``channels`` (L, B, U), ``y`` (L, B).
    """

    bits: np.ndarray
    x: np.ndarray
    s: np.ndarray
    channels: np.ndarray
    y: np.ndarray
    n0: float
    es: float
    M: int

    @property
    def U(self) -> int:
        return self.x.shape[0]

    @property
    def L(self) -> int:
        return self.x.shape[1]

    @property
    def B(self) -> int:
        return self.channels.shape[1]


def snr_to_n0(snr_db: float, B: int, Es: float = 1.0) -> float:
    """Noise variance for ``SNR = B Es / N0`` given in dB."""
    if not Es > 0:
        raise InvalidInputError(f"need Es > 0, got {Es}")
    return B * Es / 10.0 ** (snr_db / 10.0)


def map_gray_qam(bits, M: int, Es: float = 1.0) -> np.ndarray:
    """Gray-map bit groups (last axis) to symbols with average energy ``Es``."""
    return np.sqrt(Es) * map_bits(bits, M)


def frame_rng(seed: int, trial: int) -> np.random.Generator:
    """Counter-based generator for trial ``trial`` of the stream ``seed``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(trial)])))


def _complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def generate_frame(cfg: SimConfig, rng: np.random.Generator | None = None, trial: int = 0, n0: float | None = None) -> UplinkFrame:
    """Draw one uplink frame.

    Random draws happen in a fixed order (bits, channel, unit-variance noise)
    and the noise is scaled by ``sqrt(N0)`` afterwards, so frames generated
    from the same substream at different SNRs share bits, channels and noise
    directions.

    Parameters
    ----------
    cfg : SimConfig
    rng : numpy.random.Generator, optional
        Defaults to ``frame_rng(cfg.seed, trial)``.
    trial : int
        Substream index used when ``rng`` is not given.
    n0 : float, optional
        Overrides the noise variance implied by ``cfg``.
    """
    if rng is None:
        rng = frame_rng(cfg.seed, trial)
    if n0 is None:
        n0 = cfg.n0
    if n0 < 0:
        raise InvalidInputError(f"noise variance must be >= 0, got {n0}")
    U, L, B = cfg.U, cfg.L, cfg.B

    bits = rng.integers(0, 2, size=(U, L, cfg.bits_per_symbol), dtype=np.uint8)
    x = map_gray_qam(bits, cfg.M, cfg.Es)
    s = unitary_transform(x, "forward")

    if cfg.channel == "rayleigh":
        channels = _complex_normal(rng, (L, B, U))
    else:
        channels = np.zeros((L, B, U), dtype=complex)
        channels[:, np.arange(U), np.arange(U)] = 1.0
    noise = _complex_normal(rng, (L, B))

    y = np.einsum("wbu,uw->wb", channels, s) + np.sqrt(n0) * noise
    return UplinkFrame(bits=bits, x=x, s=s, channels=channels, y=y, n0=float(n0), es=float(cfg.Es), M=cfg.M)
