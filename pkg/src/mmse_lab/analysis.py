"""Convergence analysis, operation counts and error-rate sweeps.

The convergence probability bound, for i.i.d. CN(0, 1) channels with
``B > 4`` and the regularizer dropped, reads::

    Pr{ ||D^-1 E||_F^K < alpha } >= 1 - (U^2 - U) / alpha^(2/K)
                                       * sqrt(2B(B+1) / ((B-1)(B-2)(B-3)(B-4)))

It follows from Markov's inequality with the fourth moments
``E|sum_k x_k y_k|^4 = 2B(B+1)`` and ``E[g^-4] = 1/((B-1)(B-2)(B-3)(B-4))``
for ``g = sum_k |x_k|^2``, both of which can be checked by Monte Carlo here.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from . import linalg
from .counting import OpCountLedger, count_ops
from .detector import DetectorConfig, detect_frame, equalize
from .errors import InvalidInputError, MmseLabError, OutOfDomainError
from .txchain import SimConfig, frame_rng, generate_frame, snr_to_n0

CHUNK = 2000
RESIDUAL_SLACK = 1e-9


@dataclass(frozen=True)
class BoundQuery:
    U: int
    B: int
    K: int = 1
    alpha: float = 1.0

    def __post_init__(self):
        if self.U < 1:
            raise InvalidInputError(f"need U >= 1, got {self.U}")
        if self.K < 1:
            raise InvalidInputError(f"need K >= 1, got {self.K}")
        if not 0 < self.alpha <= 1:
            raise InvalidInputError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.B <= 4:
            raise OutOfDomainError(f"the bound requires B > 4, got B={self.B}")


def theorem1_bound(q: BoundQuery) -> float:
    """Lower bound on ``Pr{||D^-1 E||_F^K < alpha}``; negative values are vacuous."""
    B = q.B
    moment = math.sqrt(2 * B * (B + 1) / ((B - 1) * (B - 2) * (B - 3) * (B - 4)))
    return 1.0 - (q.U * q.U - q.U) / q.alpha ** (2.0 / q.K) * moment


def binomial_std_error(p: float, n: int) -> float:
    return math.sqrt(max(p * (1 - p), 0.0) / n)


def _complex_normal(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)


def _chunks(total: int, size: int = CHUNK):
    done = 0
    while done < total:
        n = min(size, total - done)
        yield done, n
        done += n


def empirical_norm_prob(q: BoundQuery, trials: int, seed: int = 0) -> float:
    """Fraction of i.i.d. Gaussian channels with ``||D^-1 E||_F^K < alpha`` (no regularizer)."""
    if trials < 1:
        raise InvalidInputError("trials must be >= 1")
    if q.U == 1:
        return 1.0
    rng = frame_rng(seed, 0)
    hits = 0
    for _, n in _chunks(trials):
        h = _complex_normal(rng, (n, q.B, q.U))
        norm = linalg.convergence_norm(linalg.diag_split(linalg.gram_matrix(h)))
        hits += int(np.count_nonzero(norm**q.K < q.alpha))
    return hits / trials


class MomentEstimate(NamedTuple):
    estimate: float
    target: float
    std_error: float


def moment_target(kind: str, B: int) -> float:
    if kind == "lemma1":
        return 2.0 * B * (B + 1)
    if kind == "lemma2":
        if B <= 4:
            raise OutOfDomainError(f"the inverse-moment target requires B > 4, got B={B}")
        return 1.0 / ((B - 1) * (B - 2) * (B - 3) * (B - 4))
    raise InvalidInputError(f"kind must be 'lemma1' or 'lemma2', got {kind!r}")


def moment_mc(kind: str, B: int, trials: int, seed: int = 0) -> MomentEstimate:
    """Monte-Carlo fourth moments behind the convergence bound.

    ``lemma1`` estimates ``E|sum_k x_k y_k|^4`` and ``lemma2`` estimates
    ``E[(sum_k |x_k|^2)^-4]`` for independent CN(0, 1) entries, ``k = 1..B``.
    """
    target = moment_target(kind, B)
    if B < 1 or trials < 1:
        raise InvalidInputError("need B >= 1 and trials >= 1")
    rng = frame_rng(seed, 0)
    samples = np.empty(trials)
    for start, n in _chunks(trials, max(1, 4_000_000 // (2 * B))):
        x = _complex_normal(rng, (n, B))
        if kind == "lemma1":
            y = _complex_normal(rng, (n, B))
            samples[start : start + n] = np.abs(np.sum(x * y, axis=1)) ** 4
        else:
            g = np.sum(x.real**2 + x.imag**2, axis=1)
            samples[start : start + n] = g**-4.0
    est = float(samples.mean())
    se = float(samples.std(ddof=1) / math.sqrt(trials)) if trials > 1 else float("inf")
    return MomentEstimate(est, target, se)


class ResidualCheck(NamedTuple):
    lhs: np.ndarray
    rhs: np.ndarray
    holds: np.ndarray


def residual_bound_check(a, y_mf, K: int) -> ResidualCheck:
    """Compare the Neumann residual against its Frobenius-norm bound.

    ``lhs = ||(A^-1 - A~_K) y_mf||``, ``rhs = ||D^-1 E||_F^K ||A^-1 y_mf||`` and
    ``holds = lhs <= rhs + 1e-9``.  Works on stacks of instances.
    """
    split = linalg.diag_split(a)
    exact = equalize(linalg.invert_via_cholesky(a), y_mf)
    approx = equalize(linalg.neumann_inverse(split, K), y_mf)
    lhs = np.linalg.norm(exact - approx, axis=-1)
    rhs = linalg.convergence_norm(split) ** K * np.linalg.norm(exact, axis=-1)
    return ResidualCheck(lhs, rhs, lhs <= rhs + RESIDUAL_SLACK)


# ---------------------------------------------------------------- counting


def _method(method) -> DetectorConfig:
    if isinstance(method, DetectorConfig):
        return method
    return DetectorConfig.parse(method)


def _gram_count(U: int, B: int) -> OpCountLedger:
    return OpCountLedger(2 * B * U * U, (2 * B - 1) * U * U + U, 0)


def _inversion_count(det: DetectorConfig, U: int) -> OpCountLedger:
    if det.method == "cholesky":
        return OpCountLedger(
            (10 * U**3 + 3 * U**2 - 7 * U) // 3,
            (10 * U**3 - 12 * U**2 + 2 * U) // 3,
            2 * U,
        )
    K = det.terms
    if K == 1 or U == 1:
        return OpCountLedger(0, 0, U)
    pairs = U * (U + 1) // 2
    step_mults = 2 * U * (U * U - 1)
    step_adds = pairs * (4 * U - 6) + U
    return OpCountLedger(3 * U * (U - 1) + (K - 2) * step_mults, (K - 2) * step_adds, U)


def multiplication_count(method, U: int, B: int, stage: str = "preprocessing") -> OpCountLedger:
    """Closed-form real-operation counts for one subcarrier.

    Parameters
    ----------
    method : str or DetectorConfig
        ``"mf"``, ``"neumann:K"`` or ``"cholesky"``.
    U, B : int
    stage : {"preprocessing", "inversion"}
        ``preprocessing`` covers Gram formation, regularization and inversion;
        ``inversion`` covers the inversion alone.
    """
    det = _method(method)
    if U < 1 or B < 1:
        raise InvalidInputError("need U >= 1 and B >= 1")
    inv = _inversion_count(det, U)
    if stage == "inversion":
        return inv
    if stage == "preprocessing":
        return _gram_count(U, B) + inv
    raise InvalidInputError(f"stage must be 'preprocessing' or 'inversion', got {stage!r}")


def instrumented_count(method, U: int, B: int, stage: str = "preprocessing", seed: int = 0) -> OpCountLedger:
    """Operation counts tallied while actually running the kernels on a random channel."""
    det = _method(method)
    if stage not in ("preprocessing", "inversion"):
        raise InvalidInputError(f"stage must be 'preprocessing' or 'inversion', got {stage!r}")
    h = _complex_normal(frame_rng(seed, 0), (B, U))
    with count_ops() as pre_tally:
        g = linalg.gram_matrix(h)
        a = linalg.regularized_gram(g, 0.1)
    split = linalg.diag_split(a)
    with count_ops() as inv_tally:
        if det.method == "cholesky":
            linalg.invert_via_cholesky(a)
        else:
            linalg.neumann_inverse(split, det.terms)
    inv = inv_tally.snapshot()
    return inv if stage == "inversion" else pre_tally.snapshot() + inv


# ------------------------------------------------------------------ sweeps


@dataclass(frozen=True)
class SweepRecord:
    snr_db: float
    method: str
    npi: str
    ber: float
    bit_errors: int
    trials: int
    seed: int
    failures: int = 0
    bits_per_trial: int = field(default=0, repr=False)

    def as_dict(self) -> dict:
        return asdict(self)


def _run_trial(sim: SimConfig, det: DetectorConfig, n0: float, trial: int, detect):
    frame = generate_frame(sim, trial=trial, n0=n0)
    try:
        llr = detect(det, frame)
    except MmseLabError:
        return None
    return int(np.count_nonzero(llr.hard_bits != frame.bits))


def _float_detect(det, frame):
    return detect_frame(det, frame)[0]


def ber_sweep(sim: SimConfig, det: DetectorConfig, snr_grid, threads: int = 1, detect=None) -> list:
    """Uncoded bit-error rate versus SNR.

    Trial ``t`` at every SNR point uses substream ``(sim.seed, t)``, so points
    share bits, channels and noise directions.  Frames that raise a package
    error are counted in ``failures`` and excluded from the BER.  Work is
    spread over ``threads`` workers and reduced in trial order, so the result
    does not depend on the thread count.

    Parameters
    ----------
    sim : SimConfig
    det : DetectorConfig
    snr_grid : sequence of float
        SNR points in dB.
    threads : int
    detect : callable, optional
        ``detect(det, frame) -> LlrFrame``; defaults to the floating-point detector.
    """
    if threads < 1:
        raise InvalidInputError("threads must be >= 1")
    detect = detect or _float_detect
    bits_per_trial = sim.U * sim.L * sim.bits_per_symbol
    jobs = []
    for snr in snr_grid:
        n0 = 0.0 if sim.noiseless else snr_to_n0(snr, sim.B, sim.Es)
        jobs.extend((float(snr), n0, t) for t in range(sim.trials))

    def work(job):
        return _run_trial(sim, det, job[1], job[2], detect)

    if threads == 1:
        results = [work(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, jobs))

    records = []
    for k, snr in enumerate(snr_grid):
        chunk = results[k * sim.trials : (k + 1) * sim.trials]
        ok = [r for r in chunk if r is not None]
        errors = int(sum(ok))
        ber = errors / (len(ok) * bits_per_trial) if ok else float("nan")
        records.append(
            SweepRecord(
                snr_db=float(snr),
                method=det.label,
                npi=det.npi_mode,
                ber=ber,
                bit_errors=errors,
                trials=len(ok),
                seed=sim.seed,
                failures=len(chunk) - len(ok),
                bits_per_trial=bits_per_trial,
            )
        )
    return records
