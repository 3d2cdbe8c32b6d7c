"""Command-line driver: ``npthresh detect | critical-values | simulate``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 estimation or test error.
Errors are written to standard error as one JSON object.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time

import numpy as np

from . import __version__
from .data import DatasetSpec, RunReport, load_csv_rows, threshold_percentiles
from .errors import DomainError, NpthreshError
from .inference import DEFAULT_GRID_TRIM, DEFAULT_M, critical_value
from .kernels import DEFAULT_DELTA, KernelConfig, WeightBox
from .montecarlo import SimConfig, estimation_experiment, size_experiment
from .search import SearchConfig, detect

log = logging.getLogger("npthresh")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_ESTIMATION = 0, 2, 3, 4
TABLE_ALPHAS = (0.10, 0.05, 0.01)
TABLE_K = (1, 2, 3, 4, 5)
FULL_SCALE_REPS = 1000


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _alpha(text: str) -> float:
    v = float(text)
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError(f"alpha must lie in (0, 1), got {text}")
    return v


def _positive(cast):
    def conv(text: str):
        v = cast(text)
        if not v > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return v
    conv.__name__ = cast.__name__
    return conv


def _add_output(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--json", dest="fmt", action="store_const", const="json")
    g.add_argument("--text", dest="fmt", action="store_const", const="text")


def _add_smoothing(p):
    p.add_argument("--c", type=_positive(float), default=1.0, help="bandwidth constant")
    p.add_argument("--delta", type=_positive(float), default=DEFAULT_DELTA,
                   help="bandwidth rate: h = c * scale * n^(-1/delta)")
    p.add_argument("--m", type=_positive(int), default=DEFAULT_M, help="candidate splits per regime")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="npthresh", description="Thresholds in nonparametric regression.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    d = sub.add_parser("detect", help="test for and estimate thresholds in a CSV sample")
    d.add_argument("--input", required=True)
    d.add_argument("--y", required=True)
    d.add_argument("--x", action="append", required=True, help="covariate column (repeatable)")
    d.add_argument("--q", required=True)
    d.add_argument("--no-header", action="store_true", help="columns are 0-based positions")
    _add_smoothing(d)
    d.add_argument("--scale", type=_positive(float), default=None,
                   help="bandwidth scale (default: sample sd of the covariate)")
    d.add_argument("--alpha", type=_alpha, default=0.05)
    d.add_argument("--grid-points", type=int, default=100)
    d.add_argument("--trim", type=float, default=0.05, help="search trimming fraction")
    d.add_argument("--grid-trim", type=float, default=DEFAULT_GRID_TRIM,
                   help="quantile replacing infinite regime ends in the test grid")
    d.add_argument("--min-regime-obs", type=int, default=10)
    d.add_argument("--max-thresholds", type=int, default=5)
    d.add_argument("--box-lo", type=float, action="append", help="lower box edge (per dimension)")
    d.add_argument("--box-hi", type=float, action="append", help="upper box edge (per dimension)")
    d.add_argument("--seed", type=int, default=0, help="echoed only; detection is deterministic")
    d.add_argument("--threads", type=_positive(int), default=1)
    _add_output(d)

    c = sub.add_parser("critical-values", help="quantiles of max of k independent normals")
    c.add_argument("--k", type=_positive(int), action="append", help="number of regimes (repeatable)")
    c.add_argument("--alpha", type=_alpha, action="append", help="level (repeatable)")
    _add_output(c)

    s = sub.add_parser("simulate", help="size or estimation experiment on the simulation designs")
    s.add_argument("mode", choices=("size", "estimation"))
    s.add_argument("--n", type=int, default=500)
    s.add_argument("--reps", type=int, default=200)
    s.add_argument("--full", action="store_true", help=f"use {FULL_SCALE_REPS} replications")
    s.add_argument("--seed", type=int, default=0)
    _add_smoothing(s)
    s.add_argument("--alpha", type=_alpha, action="append", help="level (repeatable)")
    s.add_argument("--grid-points", type=int, default=100)
    s.add_argument("--trim", type=float, default=0.05)
    s.add_argument("--layout", choices=("nested", "disjoint"), default="nested",
                   help="regime layout of the three-threshold design")
    s.add_argument("--threads", type=_positive(int), default=1)
    _add_output(s)
    return parser


def _emit(obj, fmt: str, text: str, out) -> None:
    if fmt == "json":
        out.write(json.dumps(obj, indent=2) + "\n")
    else:
        out.write(text + "\n")


def _scale_of(x: np.ndarray) -> float:
    sd = x.std(axis=0, ddof=1) if x.shape[0] > 1 else np.ones(x.shape[1])
    sd = np.where(sd > 0, sd, 1.0)
    return float(np.exp(np.mean(np.log(sd))))


def _box_from(args, x: np.ndarray) -> WeightBox:
    lo, hi = args.box_lo, args.box_hi
    if lo is None and hi is None:
        return WeightBox.around(x)
    if lo is None or hi is None or len(lo) != len(hi) or len(lo) != x.shape[1]:
        raise DomainError("--box-lo and --box-hi must both be given once per covariate",
                          box_lo=lo, box_hi=hi, p=x.shape[1])
    return WeightBox(tuple(lo), tuple(hi))


def _echo_flags(args, scale: float, box: WeightBox) -> list[str]:
    flags = ["detect", "--input", args.input, "--y", args.y]
    for col in args.x:
        flags += ["--x", col]
    flags += ["--q", args.q]
    if args.no_header:
        flags.append("--no-header")
    flags += ["--c", repr(args.c), "--delta", repr(args.delta), "--scale", repr(scale),
              "--m", str(args.m), "--alpha", repr(args.alpha),
              "--grid-points", str(args.grid_points), "--trim", repr(args.trim),
              "--grid-trim", repr(args.grid_trim), "--min-regime-obs", str(args.min_regime_obs),
              "--max-thresholds", str(args.max_thresholds)]
    for lo, hi in zip(box.lower, box.upper):
        flags += ["--box-lo", repr(lo), "--box-hi", repr(hi)]
    flags += ["--seed", str(args.seed)]
    return flags


def _detection_text(det, config) -> str:
    lines = [f"h = {config['h']:.6g}   alpha = {config['alpha']:g}"]
    for r, rep in enumerate(det.reports):
        verdict = "reject" if rep.reject else "accept"
        lines.append(f"round {r + 1}: H0 s={rep.s_null}  F = {rep.f_stat:.4f}  "
                     f"cv = {rep.critical_value:.4f}  p = {rep.p_value:.4g}  {verdict}")
        if r < len(det.discovery_order) and rep.reject:
            lines.append(f"         threshold added: {det.discovery_order[r]:.6g}")
    lines.append(f"thresholds (s_hat = {det.s_hat}): " +
                 (", ".join(f"{g:.6g}" for g in det.gammas) or "none"))
    if det.cap_reached:
        lines.append("stopped at --max-thresholds")
    return "\n".join(lines)


def run_detect(args, out) -> int:
    timing = {}
    t0 = time.perf_counter()
    spec = DatasetSpec(args.input, args.y, tuple(args.x), args.q, has_header=not args.no_header)
    loaded = load_csv_rows(spec)
    sample = loaded.sample
    timing["load_s"] = time.perf_counter() - t0

    scale = args.scale if args.scale is not None else _scale_of(sample.x)
    box = _box_from(args, sample.x)
    config = KernelConfig.from_rule(sample.n, c=args.c, scale=scale, delta=args.delta,
                                    dim_p=sample.p, min_regime_obs=args.min_regime_obs)
    search = SearchConfig(grid_points=args.grid_points, trim_fraction=args.trim,
                          max_thresholds=args.max_thresholds, alpha=args.alpha, m=args.m,
                          grid_trim=args.grid_trim)
    t1 = time.perf_counter()
    det = detect(sample, config, search, box)
    timing["detect_s"] = time.perf_counter() - t1

    echo = {**config.to_dict(), **search.to_dict(), "box": box.to_dict(), "seed": args.seed,
            "n": sample.n, "rows_dropped": loaded.dropped,
            "flags": _echo_flags(args, scale, box)}
    report = RunReport(detection=det.to_dict(), config=echo, timing=timing,
                       dataset=spec.to_dict(),
                       percentiles=threshold_percentiles(sample.q, det.gammas))
    _emit(report.to_dict(), args.fmt or "json", _detection_text(det, echo), out)
    return EXIT_OK


def critical_table(ks, alphas) -> list[list[float]]:
    return [[critical_value(k, a) for a in alphas] for k in ks]


def run_critical_values(args, out) -> int:
    ks = tuple(args.k) if args.k else TABLE_K
    alphas = tuple(args.alpha) if args.alpha else TABLE_ALPHAS
    table = critical_table(ks, alphas)
    head = f"{'k':>4}" + "".join(f"{f'{100 * a:g}%':>12}" for a in alphas)
    rows = [f"{k:>4}" + "".join(f"{v:>12.6f}" for v in row) for k, row in zip(ks, table)]
    obj = {"alphas": list(alphas), "rows": [{"k": k, "values": row} for k, row in zip(ks, table)]}
    _emit(obj, args.fmt or "text", "\n".join([head, *rows]), out)
    return EXIT_OK


def run_simulate(args, out) -> int:
    reps = FULL_SCALE_REPS if args.full else args.reps
    search = SearchConfig(grid_points=args.grid_points, trim_fraction=args.trim, m=args.m)
    sim = SimConfig(n=args.n, reps=reps, seed=args.seed, c=args.c, delta=args.delta, m=args.m,
                    alphas=tuple(args.alpha) if args.alpha else (0.10, 0.05, 0.01),
                    threads=args.threads, search=search, layout=args.layout)
    t0 = time.perf_counter()
    table = size_experiment(sim) if args.mode == "size" else estimation_experiment(sim)
    elapsed = time.perf_counter() - t0
    obj = {"schema_version": 1, "version": __version__, "config": sim.to_dict(),
           "table": table.to_dict(), "timing": {"run_s": elapsed}}
    echo = " ".join(f"{k}={v}" for k, v in sim.to_dict().items() if k not in ("search", "box"))
    _emit(obj, args.fmt or "text", table.to_text() + "\n" + echo, out)
    return EXIT_OK


def _fail(kind: str, message: str, status: int, context=None) -> int:
    payload = {"error": kind, "message": message, "exit_status": status}
    if context:
        payload["context"] = context
    sys.stderr.write(json.dumps(payload, default=str) + "\n")
    return status


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail("usage_error", str(exc), EXIT_USAGE)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"detect": run_detect, "critical-values": run_critical_values,
                "simulate": run_simulate}
    try:
        return handlers[args.command](args, out)
    except NpthreshError as exc:
        ctx = {k: v for k, v in exc.to_dict().get("context", {}).items() if k != "partial"}
        return _fail(exc.code, str(exc), exc.exit_status, ctx)


if __name__ == "__main__":
    sys.exit(main())
