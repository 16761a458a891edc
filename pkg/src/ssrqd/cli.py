"""ssrqd command line: calibrate, monitor, experiment, estimate-cp.

Exit codes: 0 success, 2 usage error, 3 data error, 4 calibration did not
converge or produced a flagged cell.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from .calibrate import CalibrationError, ControlLimitTable, control_limit_table
from .changepoint import ChangePointError, estimate_tau
from .experiments import ExperimentError, list_presets, run_experiment
from .montecarlo import SimulationError
from .ranks import RankError, ScoreFunction, jitter_zeros
from .schemes import (FAMILIES, SIDEDNESS, DetectorConfig, SchemeError, increments,
                      initial_statistic, scan_path, write_path_csv)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CALIBRATION = 0, 2, 3, 4
SCHEMA_VERSION = 1


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


def _float_list(text: str) -> list[float]:
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


# -- input ----------------------------------------------------------------------------

def read_series(path) -> np.ndarray:
    """Observations from a CSV with a column ``x`` or columns ``v1,v2`` (x = v1 - v2)."""
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc.strerror}") from None
    with fh:
        reader = csv.DictReader(fh)
        cols = [c.strip() for c in (reader.fieldnames or [])]
        if "x" in cols:
            keys = ["x"]
        elif "v1" in cols and "v2" in cols:
            keys = ["v1", "v2"]
        else:
            raise DataError(f"{path}: header must contain 'x' or 'v1,v2' (found {cols})")
        reader.fieldnames = cols
        vals = []
        for row_no, row in enumerate(reader, start=2):
            try:
                nums = [float(row[k]) for k in keys]
            except (TypeError, ValueError):
                raise DataError(f"{path}: row {row_no}: malformed number in "
                                f"{[row.get(k) for k in keys]}") from None
            if not all(math.isfinite(v) for v in nums):
                raise DataError(f"{path}: row {row_no}: non-finite value")
            vals.append(nums[0] if len(nums) == 1 else nums[0] - nums[1])
    if not vals:
        raise DataError(f"{path}: no observations")
    return np.array(vals, dtype=float)


# -- monitor ----------------------------------------------------------------------------

def monitor_series(config: DetectorConfig, x) -> dict:
    """Run ``config`` over ``x`` and build the alarm report."""
    x = np.asarray(x, dtype=float)
    notes = []
    if config.is_ssr:
        zeros = np.flatnonzero(x == 0.0)
        if zeros.size and config.tie_policy == "strict":
            raise DataError("zero observations under strict tie policy at data rows "
                            + ", ".join(str(i + 2) for i in zeros)
                            + " (observation indices " + ", ".join(str(i + 1) for i in zeros) + ")")
        x, notes = jitter_zeros(x)
    u = increments(config, x)
    init = initial_statistic(config)
    up = scan_path(u, config.is_sr, config.zeta, init, -np.inf, config.h, 0)
    dn = scan_path(-u, config.is_sr, config.zeta, init, -np.inf, config.h, 0) if config.two_sided else None
    a_up = up[4]
    a_dn = dn[4] if dn is not None else -1
    alarm = None
    if a_up > 0 and (a_dn < 0 or a_up <= a_dn):
        alarm = {"index": int(a_up), "direction": "up", "statistic": float(up[0])}
    elif a_dn > 0:
        alarm = {"index": int(a_dn), "direction": "down", "statistic": float(dn[0])}
    if alarm is not None and alarm["direction"] == "up" and config.two_sided and a_dn == a_up:
        notes.append(f"both sides crossed at index {a_up}; reported as up")
    tau_hat = None
    if alarm is not None and alarm["index"] >= 3:
        stopped = x[:alarm["index"]]
        tau_hat = {"raw": estimate_tau(stopped, "raw").tau_hat,
                   "rank": estimate_tau(stopped, "rank").tau_hat}
    ties = 0
    if config.is_ssr:
        a = np.abs(x)
        ties = int(a.size - np.unique(a).size)
    return {
        "schema_version": SCHEMA_VERSION,
        "scheme": config.label(),
        "zeta": config.zeta,
        "h": config.h,
        "n_observations": int(x.size),
        "alarm": alarm,
        "tau_hat": tau_hat,
        "tie_warnings": notes + ([f"{ties} tied magnitudes ranked as not-less"] if ties else []),
    }


# -- commands -------------------------------------------------------------------------------

def cmd_calibrate(args) -> int:
    if args.seed is None:
        raise UsageError("--seed is required")
    score = ScoreFunction.parse(args.score)
    for z in args.zeta:
        if z == 0 and args.family != "ssr-cusum":
            raise UsageError(f"--zeta 0 is only valid for ssr-cusum, not {args.family}")
        if z < 0:
            raise UsageError("--zeta must be nonnegative")
    if args.family.startswith("normal-"):
        raise UsageError("calibrate supports the ssr-sr and ssr-cusum families")
    if args.sidedness == "two-sided":
        from .calibrate import two_sided_limit
        h = np.empty((len(args.zeta), len(args.arl0)))
        se = np.empty_like(h)
        cells = []
        arl0s = sorted(args.arl0)
        for i, z in enumerate(args.zeta):
            row = [two_sided_limit(args.family, z, a, score=score, trials=args.trials,
                                   seed=args.seed, workers=args.workers) for a in arl0s]
            cells.append(row)
            h[i] = [c.h for c in row]
            se[i] = [c.h_std_error for c in row]
        table = ControlLimitTable(list(args.zeta), arl0s, h, se)
    else:
        table, cells = control_limit_table(args.family, args.zeta, args.arl0, score=score,
                                           trials=args.trials, seed=args.seed,
                                           workers=args.workers)
    text = table.to_csv()
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    flagged = [c for row in cells for c in row if c.flagged]
    for c in flagged:
        print(f"flagged: zeta={c.zeta:g} arl0={c.target_arl0:g} truncated fraction "
              f"{c.achieved.truncated_fraction:.3%}", file=sys.stderr)
    return EXIT_CALIBRATION if flagged else EXIT_OK


def _monitor_config(args) -> DetectorConfig:
    if args.h is None:
        if args.arl0 is None or args.table is None:
            raise UsageError("give --h, or --arl0 together with --table")
        try:
            h = ControlLimitTable.read(args.table).interpolate(args.zeta, args.arl0)
        except OSError as exc:
            raise DataError(f"cannot read {args.table}: {exc.strerror}") from None
    else:
        if args.arl0 is not None:
            raise UsageError("--h and --arl0 are mutually exclusive")
        h = args.h
    try:
        return DetectorConfig(args.family, args.zeta, h, score=ScoreFunction.parse(args.score),
                              sidedness=args.sidedness, sigma=args.sigma,
                              tie_policy=args.tie_policy)
    except (SchemeError, RankError) as exc:
        raise UsageError(str(exc)) from None


def cmd_monitor(args) -> int:
    config = _monitor_config(args)
    x = read_series(args.input)
    report = monitor_series(config, x)
    text = json.dumps(report, indent=2) + "\n"
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    if args.path_csv:
        xs = jitter_zeros(x)[0] if config.is_ssr else x
        write_path_csv(args.path_csv, config, xs)
    return EXIT_OK


def cmd_experiment(args) -> int:
    if args.list:
        print("\n".join(list_presets()))
        return EXIT_OK
    if not args.preset:
        raise UsageError("give a preset name or config file (see --list)")
    out = args.output or f"results/{Path(args.preset).stem}"
    manifest = run_experiment(args.preset, out, trials=args.trials, seed=args.seed,
                              workers=args.workers)
    print(json.dumps({"output": str(out), **manifest}, indent=2))
    return EXIT_OK


def cmd_estimate_cp(args) -> int:
    x = read_series(args.input)
    est = estimate_tau(x, args.variant)
    report = {"schema_version": SCHEMA_VERSION, "variant": est.variant, "tau_hat": est.tau_hat,
              "n_observations": int(x.size), "max_abs_T": float(est.statistic_path.max())}
    text = json.dumps(report, indent=2) + "\n"
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    if args.path_csv:
        est.write_csv(args.path_csv)
    return EXIT_OK


# -- parser -------------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ssrqd", description="Signed sequential rank S-R and CUSUM "
                                "change detection.")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("calibrate", help="compute a control-limit table by Monte Carlo")
    c.add_argument("--family", choices=["ssr-sr", "ssr-cusum"], default="ssr-sr")
    c.add_argument("--score", default="wilcoxon")
    c.add_argument("--zeta", type=_float_list, required=True, help="comma-separated reference values")
    c.add_argument("--arl0", type=_float_list, required=True, help="comma-separated ARL0 targets")
    c.add_argument("--sidedness", choices=SIDEDNESS, default="upper")
    c.add_argument("--trials", type=int, default=20_000)
    c.add_argument("--seed", type=int, required=True)
    c.add_argument("--workers", type=int, default=None)
    c.add_argument("-o", "--output")
    c.set_defaults(func=cmd_calibrate)

    m = sub.add_parser("monitor", help="run a detector over a CSV file")
    m.add_argument("input")
    m.add_argument("--family", choices=FAMILIES, default="ssr-sr")
    m.add_argument("--score", default="wilcoxon")
    m.add_argument("--zeta", type=float, required=True)
    m.add_argument("--h", type=float)
    m.add_argument("--arl0", type=float, help="interpolate h from --table at this ARL0")
    m.add_argument("--table", help="control-limit table CSV written by 'calibrate'")
    m.add_argument("--sidedness", choices=SIDEDNESS, default="upper")
    m.add_argument("--sigma", type=float, default=1.0, help="known scale for normal families")
    m.add_argument("--tie-policy", choices=["strict", "jitter"], default="strict")
    m.add_argument("-o", "--output")
    m.add_argument("--path-csv", help="also write the statistic path")
    m.set_defaults(func=cmd_monitor)

    e = sub.add_parser("experiment", help="run a named experiment preset")
    e.add_argument("preset", nargs="?")
    e.add_argument("--list", action="store_true", help="list shipped presets")
    e.add_argument("--trials", type=int)
    e.add_argument("--seed", type=int, help="override the preset seed")
    e.add_argument("--workers", type=int, default=None)
    e.add_argument("-o", "--output", help="results directory (default results/<preset>)")
    e.set_defaults(func=cmd_experiment)

    cp = sub.add_parser("estimate-cp", help="least-squares change-point estimate")
    cp.add_argument("input")
    cp.add_argument("--variant", choices=["raw", "rank"], default="raw")
    cp.add_argument("-o", "--output")
    cp.add_argument("--path-csv", help="write |T_k| for k = 1..N-1")
    cp.set_defaults(func=cmd_estimate_cp)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    if getattr(args, "workers", None) is not None and args.workers < 1:
        print("ssrqd: error: --workers must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    if getattr(args, "trials", None) is not None and args.trials < 100:
        print("ssrqd: error: --trials must be >= 100", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, ExperimentError) as exc:
        print(f"ssrqd: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ChangePointError, RankError) as exc:
        print(f"ssrqd: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SchemeError as exc:
        print(f"ssrqd: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CalibrationError, SimulationError) as exc:
        print(f"ssrqd: calibration error: {exc}", file=sys.stderr)
        return EXIT_CALIBRATION


if __name__ == "__main__":
    sys.exit(main())
