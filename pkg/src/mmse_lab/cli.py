"""Command-line front end.

Subcommands::

    sweep    uncoded BER versus SNR (CSV or JSON)
    bound    convergence-probability bound next to its Monte-Carlo estimate (JSON)
    count    closed-form and instrumented real-multiplication counts (CSV)
    moments  Monte-Carlo fourth moments against their closed forms (JSON)

Exit status is 0 on success, 2 for configuration errors and 3 for runtime
failures.  Every run emits a manifest: next to ``--out`` as
``<out>.manifest.json``, otherwise as one JSON line on stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
import time
from dataclasses import asdict, dataclass

from . import __version__
from .analysis import (
    BoundQuery,
    ber_sweep,
    binomial_std_error,
    empirical_norm_prob,
    instrumented_count,
    moment_mc,
    multiplication_count,
    theorem1_bound,
)
from .detector import DetectorConfig
from .errors import InvalidInputError, MmseLabError
from .txchain import SimConfig

log = logging.getLogger("mmse_lab")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
MODULATIONS = {"bpsk": 2, "qpsk": 4, "qam16": 16, "qam64": 64}
SWEEP_COLUMNS = ("snr_db", "method", "npi", "ber", "bit_errors", "trials", "seed")
COUNT_COLUMNS = (
    "users",
    "bs_antennas",
    "method",
    "preprocessing_mults",
    "preprocessing_mults_instrumented",
    "inversion_mults",
    "inversion_mults_instrumented",
    "inversion_divs",
)
# arguments that do not influence results and stay out of the config digest
NON_RESULT_KEYS = {"out", "threads", "config", "command", "handler"}


class ConfigError(Exception):
    pass


@dataclass
class RunManifest:
    command: str
    config_digest: str
    seed: int | None
    tool_version: str
    wall_time_s: float
    config: dict


def canonical_config(config: dict) -> str:
    return json.dumps(config, sort_keys=True, separators=(",", ":"))


def config_digest(config: dict) -> str:
    return hashlib.sha256(canonical_config(config).encode()).hexdigest()


def fmt_float(x: float) -> str:
    return format(float(x), ".17g")


def to_json(obj) -> str:
    """JSON text with every float written to 17 significant digits."""
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, float):
        return fmt_float(obj) if math.isfinite(obj) else "null"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {to_json(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(to_json(v) for v in obj) + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def parse_range(text: str, integer: bool = False):
    """Parse ``a:b:step``, ``a:b`` (step 1) or a single value into an inclusive grid."""
    parts = text.split(":")
    if not 1 <= len(parts) <= 3:
        raise ConfigError(f"cannot parse range {text!r}")
    conv = int if integer else float
    try:
        nums = [conv(p) for p in parts]
    except ValueError:
        raise ConfigError(f"cannot parse range {text!r}") from None
    if len(nums) == 1:
        return nums
    start, stop = nums[0], nums[1]
    step = nums[2] if len(nums) == 3 else conv(1)
    if step <= 0 or stop < start:
        raise ConfigError(f"range {text!r} must have start <= stop and a positive step")
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    if integer:
        return [start + k * step for k in range(count)]
    return [round(start + k * step, 12) for k in range(count)]


def _default_threads() -> int:
    env = os.environ.get("MMSE_LAB_THREADS")
    if env is None:
        return 1
    try:
        return max(1, int(env))
    except ValueError:
        return 1


def _write(out: str | None, text: str) -> None:
    if out is None:
        sys.stdout.write(text)
        sys.stdout.flush()
    else:
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def _emit_manifest(args, config: dict, seed, started: float) -> None:
    manifest = RunManifest(
        command=args.command,
        config_digest=config_digest(config),
        seed=seed,
        tool_version=__version__,
        wall_time_s=time.perf_counter() - started,
        config=config,
    )
    text = to_json(asdict(manifest))
    if args.out is None:
        sys.stderr.write(text + "\n")
    else:
        _write(args.out + ".manifest.json", text + "\n")


def _result_config(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in NON_RESULT_KEYS}


# ---------------------------------------------------------------- commands


def cmd_sweep(args) -> int:
    if args.mod not in MODULATIONS:
        raise ConfigError(f"unknown modulation {args.mod!r}")
    if args.snr is None:
        raise ConfigError("--snr is required")
    try:
        det = DetectorConfig.parse(args.detector, args.npi)
        sim = SimConfig(
            B=args.bs_antennas,
            U=args.users,
            L=args.subcarriers,
            M=MODULATIONS[args.mod],
            seed=args.seed,
            trials=args.trials,
        )
    except InvalidInputError as exc:
        raise ConfigError(str(exc)) from None
    if args.format not in ("csv", "json"):
        raise ConfigError(f"unknown format {args.format!r}")
    grid = parse_range(args.snr)

    detect = None
    if args.fxp:
        from .fxp import FxpPipelineConfig, fxp_detect_frame

        fxp_cfg = FxpPipelineConfig.hardware()

        def detect(d, frame):
            return fxp_detect_frame(fxp_cfg, d, frame)

    records = ber_sweep(sim, det, grid, threads=args.threads, detect=detect)
    for r in records:
        log.info("snr %s dB: ber %.3e (%d errors, %d trials, %d failed)", r.snr_db, r.ber, r.bit_errors, r.trials, r.failures)

    if args.format == "csv":
        lines = [",".join(SWEEP_COLUMNS)]
        for r in records:
            lines.append(
                ",".join([fmt_float(r.snr_db), r.method, r.npi, fmt_float(r.ber), str(r.bit_errors), str(r.trials), str(r.seed)])
            )
        text = "\n".join(lines) + "\n"
    else:
        rows = [{c: getattr(r, c) for c in SWEEP_COLUMNS + ("failures",)} for r in records]
        text = to_json(rows) + "\n"
    _write(args.out, text)
    return EXIT_OK


def cmd_bound(args) -> int:
    try:
        q = BoundQuery(U=args.users, B=args.bs_antennas, K=args.terms, alpha=args.alpha)
    except InvalidInputError as exc:
        raise ConfigError(str(exc)) from None
    if args.trials < 1:
        raise ConfigError("--trials must be >= 1")
    bound = theorem1_bound(q)
    emp = empirical_norm_prob(q, args.trials, args.seed)
    result = {
        "users": q.U,
        "bs_antennas": q.B,
        "terms": q.K,
        "alpha": float(q.alpha),
        "bound": bound,
        "vacuous": bound <= 0,
        "empirical": emp,
        "std_error": binomial_std_error(emp, args.trials),
        "trials": args.trials,
        "seed": args.seed,
    }
    _write(args.out, to_json(result) + "\n")
    return EXIT_OK


def cmd_count(args) -> int:
    users = parse_range(args.users_range, integer=True)
    if users[0] < 1:
        raise ConfigError("user counts must be >= 1")
    if args.bs_antennas < 1:
        raise ConfigError("--bs-antennas must be >= 1")
    try:
        methods = [DetectorConfig.parse(m) for m in args.methods.split(",") if m.strip()]
    except InvalidInputError as exc:
        raise ConfigError(str(exc)) from None
    B = args.bs_antennas
    lines = [",".join(COUNT_COLUMNS)]
    mismatch = False
    for U in users:
        if U > B:
            raise ConfigError(f"users ({U}) cannot exceed antennas ({B})")
        for det in methods:
            pre = multiplication_count(det, U, B, "preprocessing")
            pre_i = instrumented_count(det, U, B, "preprocessing")
            inv = multiplication_count(det, U, B, "inversion")
            inv_i = instrumented_count(det, U, B, "inversion")
            mismatch |= pre != pre_i or inv != inv_i
            row = (U, B, det.label, pre.real_mults, pre_i.real_mults, inv.real_mults, inv_i.real_mults, inv.real_divs)
            lines.append(",".join(str(v) for v in row))
    _write(args.out, "\n".join(lines) + "\n")
    if mismatch:
        log.error("closed-form and instrumented counts differ")
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_moments(args) -> int:
    kind = {1: "lemma1", 2: "lemma2"}.get(args.lemma)
    if kind is None:
        raise ConfigError("--lemma must be 1 or 2")
    if args.trials < 2 or args.bs_antennas < 1:
        raise ConfigError("need --trials >= 2 and --bs-antennas >= 1")
    try:
        est = moment_mc(kind, args.bs_antennas, args.trials, args.seed)
    except InvalidInputError as exc:
        raise ConfigError(str(exc)) from None
    result = {
        "lemma": args.lemma,
        "bs_antennas": args.bs_antennas,
        "estimate": est.estimate,
        "target": est.target,
        "std_error": est.std_error,
        "rel_std_error": est.std_error / est.target,
        "z_score": (est.estimate - est.target) / est.std_error,
        "trials": args.trials,
        "seed": args.seed,
    }
    _write(args.out, to_json(result) + "\n")
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with default values for any flag")
    common.add_argument("--threads", type=int, default=_default_threads(), help="worker threads (default: $MMSE_LAB_THREADS or 1)")
    common.add_argument("--out", help="output file (default: stdout)")
    common.add_argument("--seed", type=int, default=0)

    parser = argparse.ArgumentParser(prog="mmse-lab", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    parser.subcommands = {}

    p = sub.add_parser("sweep", parents=[common], help="uncoded BER versus SNR")
    p.add_argument("--users", type=int, default=4)
    p.add_argument("--bs-antennas", type=int, default=64)
    p.add_argument("--subcarriers", type=int, default=72)
    p.add_argument("--mod", default="qam64", choices=sorted(MODULATIONS))
    p.add_argument("--detector", default="cholesky", help="mf | neumann:K | cholesky")
    p.add_argument("--npi", default=None, choices=["exact", "neumann-exact", "k1", "low"])
    p.add_argument("--snr", help="grid as start:stop:step in dB")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--fxp", action="store_true", help="run the fixed-point datapath")
    p.add_argument("--format", default="csv", choices=["csv", "json"])
    p.set_defaults(handler=cmd_sweep)
    parser.subcommands["sweep"] = p

    p = sub.add_parser("bound", parents=[common], help="convergence bound versus Monte Carlo")
    p.add_argument("--users", type=int, default=8)
    p.add_argument("--bs-antennas", type=int, default=128)
    p.add_argument("--terms", type=int, default=1)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--trials", type=int, default=10000)
    p.set_defaults(handler=cmd_bound)
    parser.subcommands["bound"] = p

    p = sub.add_parser("count", parents=[common], help="real-multiplication counts")
    p.add_argument("--users-range", default="2:16")
    p.add_argument("--bs-antennas", type=int, default=128)
    p.add_argument("--methods", default="mf,neumann:2,neumann:3,cholesky")
    p.set_defaults(handler=cmd_count)
    parser.subcommands["count"] = p

    p = sub.add_parser("moments", parents=[common], help="fourth-moment Monte Carlo")
    p.add_argument("--lemma", type=int, default=1, choices=[1, 2])
    p.add_argument("--bs-antennas", type=int, default=8)
    p.add_argument("--trials", type=int, default=1_000_000)
    p.set_defaults(handler=cmd_moments)
    parser.subcommands["moments"] = p
    return parser


def _apply_config_file(parser, argv):
    """Parse twice: flags given on the command line override values from ``--config``."""
    args = parser.parse_args(argv)
    if not args.config:
        return args
    try:
        with open(args.config, encoding="utf-8") as fh:
            values = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config file: {exc}") from None
    if not isinstance(values, dict):
        raise ConfigError("config file must hold a JSON object")
    values = {k.replace("-", "_"): v for k, v in values.items()}
    known = set(vars(args)) - {"handler", "command", "config"}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    parser.subcommands[args.command].set_defaults(**values)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s", stream=sys.stderr)
    parser = build_parser()
    started = time.perf_counter()
    try:
        args = _apply_config_file(parser, argv)
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        code = args.handler(args)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except SystemExit as exc:  # argparse
        return exc.code if isinstance(exc.code, int) else EXIT_CONFIG
    except (MmseLabError, OSError, ArithmeticError) as exc:
        log.error("run failed: %s", exc)
        return EXIT_RUNTIME
    if code == EXIT_OK:
        _emit_manifest(args, _result_config(args), getattr(args, "seed", None), started)
    return code
