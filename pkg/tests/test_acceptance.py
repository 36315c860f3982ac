"""Acceptance gate.

Each criterion is a function returning ``(ok, detail)``; wall time is checked
against the criterion's budget as part of ``ok``.  Run the module directly to
get one PASS/FAIL line per criterion::

    python tests/test_acceptance.py
"""

import math
import sys
import tempfile
import time
from functools import lru_cache
from pathlib import Path

import numpy as np
import pytest

from mmse_lab import linalg
from mmse_lab.analysis import (
    BoundQuery,
    ber_sweep,
    binomial_std_error,
    empirical_norm_prob,
    instrumented_count,
    moment_mc,
    multiplication_count,
    residual_bound_check,
    theorem1_bound,
)
from mmse_lab.cli import main as cli_main
from mmse_lab.constellation import constellation_points
from mmse_lab.detector import DetectorConfig, detect_frame, matched_filter
from mmse_lab.fxp import FxpPipelineConfig, fxp_detect_frame
from mmse_lab.txchain import SimConfig, frame_rng, generate_frame

sys.path.insert(0, str(Path(__file__).parent))
from oracles import BOUND_VALUES, INVERSION_MULTS  # noqa: E402

SEED = 2024


def _hpd_batch(rng, n, u, b, reg):
    h = (rng.standard_normal((n, b, u)) + 1j * rng.standard_normal((n, b, u))) / math.sqrt(2)
    return linalg.regularized_gram(linalg.gram_matrix(h), reg), h


def _timed(budget_s):
    def wrap(fn):
        def run():
            start = time.perf_counter()
            ok, detail = fn()
            elapsed = time.perf_counter() - start
            within = elapsed < budget_s
            return ok and within, f"{detail}; {elapsed:.1f} s (budget {budget_s:g} s{'' if within else ', EXCEEDED'})"

        run.__name__ = fn.__name__
        run.__doc__ = fn.__doc__
        return run

    return wrap


@_timed(10)
def criterion_1():
    """Neumann approximation error bounded by the convergence norm; long series matches Cholesky."""
    rng = frame_rng(SEED, 1)
    worst_ratio, worst_long, long_checked = 0.0, 0.0, 0
    for u in (2, 4, 8):
        a, _ = _hpd_batch(rng, 1000, u, 16 * u, 0.1)
        split = linalg.diag_split(a)
        norm = linalg.convergence_norm(split)
        exact = linalg.invert_via_cholesky(a)
        exact_norm = np.linalg.norm(exact, axis=(-2, -1))
        for k in range(1, 7):
            err = np.linalg.norm(linalg.neumann_inverse(split, k) - exact, axis=(-2, -1)) / exact_norm
            worst_ratio = max(worst_ratio, float(np.max(err / norm**k)))
        sel = norm < 0.8
        if np.any(sel):
            long = linalg.neumann_inverse(linalg.DiagSplit(split.d[sel], split.e[sel]), 32)
            rel = np.linalg.norm(long - exact[sel], axis=(-2, -1)) / exact_norm[sel]
            worst_long = max(worst_long, float(rel.max()))
            long_checked += int(sel.sum())
    ok = worst_ratio <= 1.0 + 1e-9 and worst_long <= 1e-8 and long_checked > 0
    return ok, (
        f"max error/norm^K = {worst_ratio:.4f} (<= 1) over 3000 matrices, K=1..6; "
        f"K=32 vs Cholesky max rel {worst_long:.2e} (<= 1e-8) on {long_checked} matrices with norm < 0.8"
    )


@_timed(30)
def criterion_2():
    """Residual bound holds on 10^4 random instances for K = 1..4."""
    rng = frame_rng(SEED, 2)
    violations, total, worst = 0, 0, 0.0
    for u, b, reg, n in ((8, 128, 0.1, 4000), (4, 64, 0.05, 3000), (2, 16, 0.5, 3000)):
        a, h = _hpd_batch(rng, n, u, b, reg)
        s = (rng.standard_normal((n, u)) + 1j * rng.standard_normal((n, u))) / math.sqrt(2)
        noise = (rng.standard_normal((n, b)) + 1j * rng.standard_normal((n, b))) * math.sqrt(reg / 2)
        y_mf = matched_filter(h, np.einsum("nbu,nu->nb", h, s) + noise)
        for k in (1, 2, 3, 4):
            check = residual_bound_check(a, y_mf, k)
            violations += int(np.count_nonzero(~check.holds))
            total += n
            worst = max(worst, float(np.max(check.lhs - check.rhs)))
    return violations == 0, f"{violations} violations in {total} checks (10^4 instances x 4 K); max lhs-rhs = {worst:.2e}"


@_timed(60)
def criterion_3():
    """Empirical convergence probability never undershoots the analytic bound by more than 3 sigma."""
    parts, ok = [], True
    for key in ((8, 128, 1, 1.0), (4, 64, 1, 1.0), (8, 128, 2, 0.5), (4, 64, 3, 0.25)):
        q = BoundQuery(*key)
        bound = theorem1_bound(q)
        emp = empirical_norm_prob(q, 10_000, seed=SEED)
        sigma = binomial_std_error(emp, 10_000)
        ok &= emp >= bound - 3 * sigma
        ok &= abs(bound - BOUND_VALUES[key]) < 5e-5
        parts.append(f"{key}: bound {bound:.4f}, empirical {emp:.4f}")
    ok &= round(theorem1_bound(BoundQuery(8, 128)), 4) == 0.3538
    ok &= round(theorem1_bound(BoundQuery(4, 64)), 4) == 0.7105
    return ok, "; ".join(parts)


@_timed(60)
def criterion_4():
    """Monte-Carlo fourth moments within 5 standard errors of their closed forms."""
    parts, ok = [], True
    for kind, b in (("lemma1", 1), ("lemma1", 8), ("lemma1", 128), ("lemma2", 6), ("lemma2", 16), ("lemma2", 64)):
        est = moment_mc(kind, b, 1_000_000, seed=SEED)
        z = (est.estimate - est.target) / est.std_error
        ok &= abs(z) <= 5
        parts.append(f"{kind} B={b}: z={z:+.2f}")
    return ok, "; ".join(parts)


@_timed(5)
def criterion_5():
    """Closed-form counts equal instrumented counts; complexity ordering and crossover."""
    methods = ("mf", "neumann:2", "neumann:3", "neumann:4", "cholesky")
    mismatches = 0
    for u in (2, 4, 8, 16):
        for b in (16, 64, 128):
            for m in methods:
                for stage in ("preprocessing", "inversion"):
                    mismatches += multiplication_count(m, u, b, stage) != instrumented_count(m, u, b, stage)
    inv = {(m, u): multiplication_count(m, u, 128, "inversion").real_mults for m in methods for u in range(4, 17)}
    ordered = all(inv["mf", u] < inv["neumann:2", u] < inv["neumann:3", u] < inv["cholesky", u] for u in range(4, 17))
    crossover = inv["neumann:4", 16] > inv["cholesky", 16]
    frozen = all(inv[m, u] == INVERSION_MULTS[m][u] for m in INVERSION_MULTS for u in (4, 8, 16))
    return mismatches == 0 and ordered and crossover and frozen, (
        f"{mismatches} closed-form/instrumented mismatches; MF<K2<K3<Cholesky for U=4..16: {ordered}; "
        f"U=16 K=4 {inv['neumann:4', 16]} > Cholesky {inv['cholesky', 16]}: {crossover}"
    )


@lru_cache(maxsize=None)
def detection_sweep():
    """BER curves for criterion 6, computed once per process."""
    sim = SimConfig(B=128, U=8, L=72, M=64, trials=200, seed=SEED)
    grid = [10.0, 12.0, 14.0, 16.0, 18.0, 20.0, 22.0, 24.0]
    curves = {}
    for label in ("cholesky", "neumann:3", "neumann:2", "mf"):
        curves[label] = ber_sweep(sim, DetectorConfig.parse(label), grid)
    return grid, curves


@_timed(600)
def criterion_6():
    """BER ordering Cholesky <= K=3 <= K=2 <= MF, K=3 within 1.5x of Cholesky, MF floor."""
    grid, curves = detection_sweep()
    ber = {k: [r.ber for r in v] for k, v in curves.items()}
    nbits = curves["cholesky"][0].trials * curves["cholesky"][0].bits_per_trial
    failures = sum(r.failures for v in curves.values() for r in v)
    sigma = {k: [binomial_std_error(p, nbits) for p in v] for k, v in ber.items()}
    chain = ("cholesky", "neumann:3", "neumann:2", "mf")
    ordered = all(
        ber[lo][i] <= ber[hi][i] + 3 * math.hypot(sigma[lo][i], sigma[hi][i])
        for lo, hi in zip(chain, chain[1:])
        for i in range(len(grid))
    )
    ratios = [k3 / ch for k3, ch in zip(ber["neumann:3"], ber["cholesky"])]
    within = all(r <= 1.5 for r in ratios)
    floor = ber["mf"][grid.index(18.0)] / ber["mf"][grid.index(24.0)]
    ok = ordered and within and floor < 2 and failures == 0
    bad = [f"{g:g} dB: {r:.2f}x" for g, r in zip(grid, ratios) if r > 1.5]
    return ok, (
        f"ordering within 3 sigma: {ordered}; K=3/Cholesky <= 1.5 at every point: {within}"
        + (f" (exceeded at {', '.join(bad)})" if bad else "")
        + f"; MF BER(18 dB)/BER(24 dB) = {floor:.3f} (< 2); failed frames {failures}; "
        + f"BER at 24 dB: " + ", ".join(f"{k} {v[-1]:.2e}" for k, v in ber.items())
    )


@_timed(5)
def criterion_7():
    """Noiseless identity channels decode perfectly; Gray adjacency and constellation energy."""
    errors = 0
    for m in (2, 4, 16, 64):
        f = generate_frame(SimConfig(B=8, U=4, L=72, M=m, channel="identity", noiseless=True, seed=SEED))
        for label in ("mf", "neumann:2", "neumann:3", "neumann:4", "cholesky"):
            errors += int(np.count_nonzero(detect_frame(DetectorConfig.parse(label), f)[0].hard_bits != f.bits))
    gray_ok, energy_ok = True, True
    for m in (2, 4, 16, 64):
        points, labels = constellation_points(m)
        energy_ok &= abs(np.mean(np.abs(points) ** 2) - 1) < 1e-12
        if m == 2:
            continue
        step = np.min(np.abs(points[:, None] - points[None, :])[~np.eye(m, dtype=bool)])
        dist = np.abs(points[:, None] - points[None, :])
        neighbors = np.isclose(dist, step, rtol=1e-9)
        hamming = np.sum(labels[:, None, :] != labels[None, :, :], axis=-1)
        gray_ok &= bool(np.all(hamming[neighbors] == 1))
    ok = errors == 0 and gray_ok and energy_ok
    return ok, f"bit errors {errors} over 5 methods x 4 orders; Gray adjacency {gray_ok}; unit energy {energy_ok}"


@_timed(120)
def criterion_8():
    """Fixed-point agreement with floating point at hardware and widened word lengths."""
    cfg = SimConfig(B=64, U=4, L=72, M=64, snr_db=20.0, seed=SEED)
    hardware, wide = FxpPipelineConfig.hardware(), FxpPipelineConfig.widened()
    parts, ok = [], True
    for label in ("mf", "neumann:3", "cholesky"):
        det = DetectorConfig.parse(label)
        agree = total = 0
        dev = 0.0
        for t in range(100):
            f = generate_frame(cfg, trial=t)
            ref = detect_frame(det, f)[0]
            agree += int(np.sum(fxp_detect_frame(hardware, det, f).hard_bits == ref.hard_bits))
            total += ref.hard_bits.size
            if t < 20:
                llr = fxp_detect_frame(wide, det, f).llrs
                dev = max(dev, float(np.max(np.abs(llr - ref.llrs)) / np.max(np.abs(ref.llrs))))
        ok &= agree / total >= 0.99 and dev <= 1e-4
        parts.append(f"{label}: agreement {agree / total:.4f}, widened deviation {dev:.1e}")
    return ok, "; ".join(parts)


@_timed(120)
def criterion_9():
    """Every command is byte-identical on re-run, including with several threads."""
    commands = {
        "sweep": ["sweep", "--users", "8", "--bs-antennas", "128", "--mod", "qam64", "--detector", "neumann:3",
                  "--npi", "low", "--snr", "10:24:2", "--trials", "10", "--seed", "7"],
        "sweep-fxp": ["sweep", "--users", "4", "--bs-antennas", "64", "--mod", "qam16", "--detector", "cholesky",
                      "--snr", "10:20:5", "--trials", "5", "--seed", "3", "--fxp"],
        "bound": ["bound", "--users", "8", "--bs-antennas", "128", "--trials", "2000", "--seed", "1"],
        "count": ["count", "--users-range", "1:16", "--bs-antennas", "64"],
        "moments": ["moments", "--lemma", "2", "--bs-antennas", "16", "--trials", "20000", "--seed", "5"],
    }
    identical = {}
    with tempfile.TemporaryDirectory() as tmp:
        for name, argv in commands.items():
            outputs = []
            for run, threads in enumerate(("1", "1", "3")):
                path = Path(tmp) / f"{name}-{run}.out"
                code = cli_main(argv + ["--threads", threads, "--out", str(path)])
                outputs.append(path.read_bytes() if code == 0 else None)
            identical[name] = outputs[0] is not None and outputs.count(outputs[0]) == 3
    ok = all(identical.values())
    return ok, "; ".join(f"{k}: {'identical' if v else 'DIFFERS'}" for k, v in identical.items())


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6, criterion_7, criterion_8, criterion_9]


def report(n, fn):
    ok, detail = fn()
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {fn.__doc__.strip()} [{detail}]"
    print(line)
    return ok, line


@pytest.mark.slow
@pytest.mark.parametrize("n", range(1, len(CRITERIA) + 1))
def test_criterion(n):
    ok, line = report(n, CRITERIA[n - 1])
    assert ok, line


if __name__ == "__main__":
    results = [report(n, fn)[0] for n, fn in enumerate(CRITERIA, start=1)]
    sys.exit(0 if all(results) else 1)
