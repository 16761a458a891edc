"""Named experiment presets: declarative JSON configs that regenerate result tables.

Each preset has a ``kind`` selecting a runner below, a default ``seed`` and
``trials``, and kind-specific parameters.  Runners write CSV files into an
output directory; :func:`run_experiment` adds a ``manifest.json`` holding the
seed, trial count, runtime and version.  CSV contents depend only on the
preset, seed and trial count.
"""

from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import json
import subprocess
import time
from importlib import resources, metadata
from pathlib import Path

from .calibrate import control_limit_table, estimate_icarl, find_control_limits
from .distributions import DistributionSpec, score_correlation, theta0
from .montecarlo import NORMAL, default_cap
from .ranks import ScoreFunction
from .runlength import ChangeScenario, cadt, delay_curve, normal_approx_cadt
from .schemes import DetectorConfig


class ExperimentError(ValueError):
    pass


def list_presets() -> list[str]:
    root = resources.files("ssrqd") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_preset(name_or_path: str) -> dict:
    p = Path(name_or_path)
    if p.suffix == ".json" and p.exists():
        text = p.read_text()
    else:
        if name_or_path not in list_presets():
            raise ExperimentError(f"unknown preset {name_or_path!r}; available: "
                                  + ", ".join(list_presets()))
        text = (resources.files("ssrqd") / "presets" / f"{name_or_path}.json").read_text()
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ExperimentError(f"preset is not valid JSON: {exc}") from None
    if cfg.get("kind") not in RUNNERS:
        raise ExperimentError(f"preset kind must be one of {sorted(RUNNERS)}")
    cfg.setdefault("name", p.stem if p.suffix == ".json" else name_or_path)
    return cfg


def version_string() -> str:
    try:
        v = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        v = "unknown"
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True,
                             text=True, timeout=5, cwd=Path(__file__).parent)
        if out.returncode == 0 and out.stdout.strip():
            v += "+" + out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return v


def _writer(path: Path, header):
    fh = open(path, "w", newline="")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header)
    return fh, w


def _f(x, nd=6):
    return f"{x:.{nd}f}"


# -- runners ------------------------------------------------------------------------

def _run_theta0(cfg, out: Path, trials, seed, workers):
    fh, w = _writer(out / "theta0.csv", ["distribution", "theta0", "method"])
    with fh:
        for d in cfg["distributions"]:
            t = theta0(DistributionSpec.parse(d))
            w.writerow([d, _f(t.value), t.method])
    return ["theta0.csv"]


def _run_correlations(cfg, out: Path, trials, seed, workers):
    i = int(cfg.get("finite_rank_i", 100))
    fh, w = _writer(out / "correlations.csv",
                    ["score", "distribution", "quadrature", f"finite_rank_i{i}"])
    with fh:
        for s in cfg["scores"]:
            score = ScoreFunction.parse(s)
            for d in cfg["distributions"]:
                spec = DistributionSpec.parse(d)
                w.writerow([s, d, _f(score_correlation(score, spec)),
                            _f(score_correlation(score, spec, i=i))])
    return ["correlations.csv"]


def _run_misspecification(cfg, out: Path, trials, seed, workers):
    """True ICARL of the normal S-R when sigma is misestimated or the law is not normal."""
    arl0s = [float(a) for a in cfg["arl0s"]]
    scenarios = [("sigma_hat", str(s), float(s)) for s in cfg.get("sigma_hats", [])]
    scenarios += [("distribution", d, DistributionSpec.parse(d)) for d in cfg.get("distributions", [])]
    if not scenarios:
        raise ExperimentError("misspecification preset needs sigma_hats or distributions")
    fh, w = _writer(out / "icarl.csv", ["scenario", "value", "zeta", "arl0", "h", "icarl",
                                        "std_error", "trials", "truncated"])
    with fh:
        for z in cfg["zetas"]:
            cals = find_control_limits("normal-sr", float(z), arl0s, trials=trials, seed=seed,
                                       workers=workers)
            for cal in cals:
                conf = DetectorConfig("normal-sr", float(z), cal.h)
                cap = default_cap(cal.target_arl0 * 3)
                for kind, label, val in scenarios:
                    if kind == "sigma_hat":
                        s = estimate_icarl(conf, NORMAL, trials, cap, seed, workers, 1.0 / val)
                    else:
                        s = estimate_icarl(conf, val, trials, cap, seed, workers)
                    w.writerow([kind, label, f"{z:g}", f"{cal.target_arl0:g}", _f(cal.h, 4),
                                _f(s.mean, 2), _f(s.std_error, 2), s.trials, s.truncated_count])
    return ["icarl.csv"]


def _run_cadt_table(cfg, out: Path, trials, seed, workers):
    tau = int(cfg["tau"])
    fh, w = _writer(out / "cadt.csv", ["distribution", "theta0", "zeta", "h", "delta", "tau",
                                       "W", "W_se", "N", "N_se", "discarded_fraction"])
    with fh:
        for col in cfg["columns"]:
            spec = DistributionSpec.parse(col["distribution"])
            t0 = col.get("theta0", theta0(spec).value)
            z, h = float(col["zeta"]), float(col["h"])
            conf = DetectorConfig("ssr-sr", z, h)
            for d in cfg["deltas"]:
                wv = cadt(conf, ChangeScenario(spec, float(d), tau), trials, seed, workers=workers)
                nv = normal_approx_cadt(z, h, float(d), t0, tau, trials, seed, workers=workers)
                w.writerow([col["distribution"], _f(t0, 4), f"{z:g}", f"{h:g}", f"{d:g}", tau,
                            _f(wv.mean, 3), _f(wv.std_error, 3), _f(nv.mean, 3),
                            _f(nv.std_error, 3), _f(wv.discarded_fraction, 4)])
    return ["cadt.csv"]


def _grid(spec):
    if isinstance(spec, dict):
        start, stop, step = float(spec["start"]), float(spec["stop"]), float(spec["step"])
        n = int(round((stop - start) / step)) + 1
        return [round(start + k * step, 10) for k in range(n)]
    return [float(g) for g in spec]


def _run_delay_curve(cfg, out: Path, trials, seed, workers):
    spec = DistributionSpec.parse(cfg.get("distribution", "normal"))
    axis = cfg["axis"]
    kind = cfg.get("measure", "cadt")
    grid = _grid(cfg["grid"])
    files = []
    if axis == "tau":
        fixed = cfg.get("deltas") or [cfg["delta"]]
    else:
        fixed = cfg.get("taus") or [cfg["tau"]]
    for sch in cfg["schemes"]:
        conf = DetectorConfig(sch["family"], float(sch["zeta"]), float(sch["h"]),
                              score=ScoreFunction.parse(sch.get("score", "wilcoxon")))
        for fv in fixed:
            kwargs = {"delta": float(fv)} if axis == "tau" else {"tau": int(fv)}
            curve = delay_curve(conf, axis, grid, dist=spec, trials=trials, seed=seed, kind=kind,
                                workers=workers, reset_ranks=cfg.get("reset_ranks", True), **kwargs)
            tag = "delta" if axis == "tau" else "tau"
            name = f"{kind}_{sch['family']}_zeta{float(sch['zeta']):g}_{tag}{fv:g}.csv"
            (out / name).write_text(curve.to_csv())
            files.append(name)
    return files


def _run_control_limits(cfg, out: Path, trials, seed, workers):
    table, cells = control_limit_table(cfg["family"], cfg["zetas"], cfg["arl0s"], trials=trials,
                                       seed=seed, workers=workers,
                                       score=ScoreFunction.parse(cfg.get("score", "wilcoxon")))
    name = f"control_limits_{cfg['family']}.csv"
    table.write(out / name)
    return [name]


RUNNERS = {
    "theta0": _run_theta0,
    "correlations": _run_correlations,
    "misspecification": _run_misspecification,
    "cadt_table": _run_cadt_table,
    "delay_curve": _run_delay_curve,
    "control_limits": _run_control_limits,
}


def run_experiment(name_or_path: str, outdir, *, trials: int | None = None, seed: int | None = None,
                   workers: int | None = None) -> dict:
    cfg = load_preset(name_or_path)
    trials = int(trials if trials is not None else cfg.get("trials", 20_000))
    seed = int(seed if seed is not None else cfg["seed"])
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    files = RUNNERS[cfg["kind"]](cfg, out, trials, seed, workers)
    runtime = time.perf_counter() - t0
    manifest = {
        "preset": cfg["name"],
        "kind": cfg["kind"],
        "seed": seed,
        "trials": trials,
        "runtime_seconds": round(runtime, 3),
        "version": version_string(),
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "files": {f: hashlib.sha256((out / f).read_bytes()).hexdigest() for f in files},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest
