"""Out-of-control run-length functionals.

CADT is the conditional average delay E_tau[N - tau | N > tau]; SADT is the
delay of a scheme that is restarted after every false alarm before the change.
Both are estimated by Monte Carlo on the engine in :mod:`ssrqd.montecarlo`.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .distributions import DistributionSpec, Theta0Value, theta0
from .montecarlo import (NORMAL, RunLengthSummary, Scenario, SimulationError, TrialStream,
                         default_cap, map_trials, simulate_path, trial_rng)
from .ranks import WILCOXON, ScoreFunction, normalizer
from .schemes import DetectorConfig

MIN_SURVIVORS = 100
AXES = ("tau", "delta")


@dataclass(frozen=True)
class ChangeScenario:
    """Observations 1..tau come from ``in_control``; from tau + 1 on they are shifted by delta."""

    in_control: DistributionSpec = NORMAL
    delta: float = 0.0
    tau: int = 0

    def __post_init__(self):
        if int(self.tau) != self.tau or self.tau < 0:
            raise SimulationError("tau must be a nonnegative integer")
        if not math.isfinite(self.delta):
            raise SimulationError("delta must be finite")

    def scenario(self) -> Scenario:
        return Scenario(self.in_control, float(self.delta), int(self.tau))


def _cap_for(tau: int, cap: int | None) -> int:
    return int(cap) if cap is not None else default_cap(500) + int(tau)


# -- CADT ---------------------------------------------------------------------------

def _cadt_chunk(args):
    config, scenario, seed, lo, hi, cap = args
    out = []
    for trial in range(lo, hi):
        stream = TrialStream(scenario, trial_rng(seed, trial))
        rec = simulate_path(config, stream, config.h, cap)
        out.append((rec.length, rec.alarm < 0))
    return out


def run_lengths(config: DetectorConfig, scenario: ChangeScenario, trials: int, seed: int,
                cap: int | None = None, workers: int | None = None):
    """Raw run lengths N and truncation flags for ``trials`` independent paths."""
    if trials < 1:
        raise SimulationError("trials must be >= 1")
    cap = _cap_for(scenario.tau, cap)
    rows = map_trials(_cadt_chunk, config, scenario.scenario(), seed, trials, workers, cap)
    n = np.array([r[0] for r in rows], dtype=np.int64)
    trunc = np.array([r[1] for r in rows], dtype=bool)
    return n, trunc


def cadt(config: DetectorConfig, scenario: ChangeScenario, trials: int, seed: int,
         cap: int | None = None, workers: int | None = None) -> RunLengthSummary:
    """Conditional average delay E[N - tau | N > tau].

    Trials alarming at or before tau are discarded; their count is reported in
    ``discarded``.
    """
    cap = _cap_for(scenario.tau, cap)
    n, trunc = run_lengths(config, scenario, trials, seed, cap, workers)
    keep = n > scenario.tau
    survivors = int(keep.sum())
    if survivors < MIN_SURVIVORS:
        raise SimulationError(
            f"only {survivors} of {trials} trials survive to tau = {scenario.tau}; "
            f"need at least {MIN_SURVIVORS}")
    return RunLengthSummary.from_samples(n[keep] - scenario.tau,
                                         truncated_count=int(trunc[keep].sum()), cap=cap,
                                         seed=seed, discarded=int(trials - survivors),
                                         h=config.h)


def normal_approx_cadt(zeta: float, h: float, delta: float, theta0_value, tau: int, trials: int,
                       seed: int = 0, family: str = "normal-sr", cap: int | None = None,
                       workers: int | None = None) -> RunLengthSummary:
    """CADT of the normal scheme with the same (zeta, h) under a shift of theta0 * delta."""
    t = theta0_value.value if isinstance(theta0_value, Theta0Value) else float(theta0_value)
    if family not in ("normal-sr", "normal-cusum"):
        raise SimulationError("normal approximation uses a normal-sr or normal-cusum scheme")
    config = DetectorConfig(family, zeta, h)
    return cadt(config, ChangeScenario(NORMAL, t * delta, tau), trials, seed, cap, workers)


# -- SADT ---------------------------------------------------------------------------

def _sadt_chunk(args):
    config, scenario, seed, lo, hi, cap, reset_ranks = args
    tau = scenario.tau
    out = []
    for trial in range(lo, hi):
        stream = TrialStream(scenario, trial_rng(seed, trial))
        start = 0
        restarts = 0
        while True:
            rec = simulate_path(config, stream, config.h, cap, start=start,
                                rank_origin=None if reset_ranks else 0)
            if rec.alarm < 0:
                out.append((start + rec.length - tau, True, restarts))
                break
            n_abs = start + rec.alarm
            if n_abs > tau:
                out.append((n_abs - tau, False, restarts))
                break
            start = n_abs
            restarts += 1
    return out


def sadt(config: DetectorConfig, scenario: ChangeScenario, trials: int, seed: int,
         cap: int | None = None, workers: int | None = None,
         reset_ranks: bool = True) -> RunLengthSummary:
    """Steady-state delay: restart at every alarm up to tau, then measure N - tau.

    A restart resets the statistic and, unless ``reset_ranks`` is False, the
    sequential-rank memory too.  ``cap`` limits each inter-alarm segment.
    """
    if trials < MIN_SURVIVORS:
        raise SimulationError(f"sadt needs at least {MIN_SURVIVORS} trials")
    cap = int(cap) if cap is not None else default_cap(500)
    rows = map_trials(_sadt_chunk, config, scenario.scenario(), seed, trials, workers, cap,
                      bool(reset_ranks))
    d = np.array([r[0] for r in rows], dtype=float)
    trunc = int(sum(r[1] for r in rows))
    return RunLengthSummary.from_samples(d, truncated_count=trunc, cap=cap, seed=seed,
                                         h=config.h)


# -- delay curves ---------------------------------------------------------------------

@dataclass(frozen=True)
class CurvePoint:
    grid_value: float
    summary: RunLengthSummary


@dataclass
class DelayCurve:
    axis: str
    points: list

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["grid_value", "estimate", "std_error", "trials", "discarded_fraction"])
        for p in self.points:
            s = p.summary
            w.writerow([f"{p.grid_value:g}", f"{s.mean:.6f}", f"{s.std_error:.6f}", s.trials,
                        f"{s.discarded_fraction:.6f}"])
        return buf.getvalue()


def delay_curve(config: DetectorConfig, axis: str, grid, *, dist: DistributionSpec = NORMAL,
                delta: float | None = None, tau: int | None = None, trials: int = 20_000,
                seed: int = 0, kind: str = "cadt", cap: int | None = None,
                workers: int | None = None, reset_ranks: bool = True) -> DelayCurve:
    """CADT (or SADT) along a grid of change points or of shift sizes.

    ``axis="tau"`` holds ``delta`` fixed; ``axis="delta"`` holds ``tau`` fixed.
    Every grid point reuses ``seed``, so neighbouring points share random numbers.
    """
    grid = [float(g) for g in grid]
    if not grid:
        raise SimulationError("delay curve grid is empty")
    if axis not in AXES:
        raise SimulationError(f"axis must be one of {AXES}")
    if kind not in ("cadt", "sadt"):
        raise SimulationError("kind must be cadt or sadt")
    if axis == "tau" and delta is None:
        raise SimulationError("an over-tau curve needs a fixed delta")
    if axis == "delta" and tau is None:
        raise SimulationError("an over-delta curve needs a fixed tau")
    points = []
    for g in grid:
        sc = ChangeScenario(dist, delta, int(g)) if axis == "tau" else ChangeScenario(dist, g, int(tau))
        if kind == "cadt":
            s = cadt(config, sc, trials, seed, cap, workers)
        else:
            s = sadt(config, sc, trials, seed, cap, workers, reset_ranks)
        points.append(CurvePoint(g, s))
    return DelayCurve(axis, points)


# -- mean of the first post-change score ------------------------------------------------

@dataclass(frozen=True)
class ShiftMeanCheck:
    mc_mean: float
    std_error: float
    predicted: float
    trials: int


def xi_shift_mean_check(dist: DistributionSpec, delta: float, tau: int = 500,
                        trials: int = 1_000_000, seed: int = 0,
                        score: ScoreFunction = WILCOXON, chunk: int = 2000) -> ShiftMeanCheck:
    """Monte Carlo mean of xi_{tau+1} when X_{tau+1} alone carries the shift delta.

    The tau in-control observations are drawn explicitly for every trial; the
    prediction is theta0 * delta.
    """
    if tau < 1:
        raise SimulationError("tau must be >= 1")
    if trials < 2:
        raise SimulationError("trials must be >= 2")
    v = normalizer(score, tau + 1)
    total = 0.0
    total_sq = 0.0
    done = 0
    k = 0
    while done < trials:
        m = min(chunk, trials - done)
        rng = trial_rng(seed, k)
        past = np.abs(dist.draw(rng, m * tau)).reshape(m, tau)
        new = dist.draw(rng, m) + delta
        r_plus = 1 + (past < np.abs(new)[:, None]).sum(axis=1)
        r_signed = np.sign(new) * r_plus / (tau + 2)
        xi = score.J(r_signed) / v
        total += float(xi.sum())
        total_sq += float((xi * xi).sum())
        done += m
        k += 1
    mean = total / trials
    var = (total_sq - trials * mean * mean) / (trials - 1)
    pred = theta0(dist.centered()).value * delta
    return ShiftMeanCheck(mean, math.sqrt(max(var, 0.0) / trials), pred, trials)
