"""Monte Carlo engine shared by calibration and run-length experiments.

Each trial owns a random stream derived from ``(seed, trial_index)`` through
numpy's SeedSequence spawn keys, so results do not depend on how trials are
split across workers.  A trial is simulated until its statistic first reaches
``h_stop`` (or the cap) and the running-maximum records of the statistic path
are kept.  Because the first passage above any h <= h_stop happens at a record,
those records give the run length for every such h from the same random
numbers, which is what makes coupled bisection on h exact and cheap.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from .distributions import DistributionSpec
from .schemes import DetectorConfig, increments, initial_statistic, scan_path

NORMAL = DistributionSpec("normal")
FIRST_BLOCK = 256
TRIALS_PER_TASK = 500


class SimulationError(RuntimeError):
    pass


def default_cap(arl0: float) -> int:
    return int(max(50 * arl0, 5000))


def resolve_workers(workers: int | None = None) -> int:
    if workers is None:
        env = os.environ.get("SSRQD_THREADS")
        if env:
            try:
                workers = int(env)
            except ValueError:
                raise SimulationError(f"SSRQD_THREADS must be an integer, got {env!r}") from None
        else:
            workers = os.cpu_count() or 1
    return max(1, int(workers))


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(trial),)))


@dataclass(frozen=True)
class Scenario:
    """Data-generating process for one trial.

    Observations 1..tau come from ``dist``; from tau + 1 on ``delta`` is added.
    ``tau=None`` means no change.  Every observation is finally multiplied by
    ``multiplier`` (1 / sigma_hat in the misestimated-scale experiments).
    """

    dist: DistributionSpec = NORMAL
    delta: float = 0.0
    tau: int | None = None
    multiplier: float = 1.0


class TrialStream:
    """Lazily extended realisation of a scenario."""

    def __init__(self, scenario: Scenario, rng: np.random.Generator):
        self.scenario = scenario
        self.rng = rng
        self._buf = np.empty(0)

    def take(self, n: int) -> np.ndarray:
        have = self._buf.size
        if n > have:
            sc = self.scenario
            new = sc.dist.draw(self.rng, n - have)
            if sc.tau is not None and sc.delta != 0.0:
                idx = np.arange(have, n)
                new = np.where(idx >= sc.tau, new + sc.delta, new)
            if sc.multiplier != 1.0:
                new = new * sc.multiplier
            self._buf = np.concatenate([self._buf, new])
        return self._buf[:n]


@dataclass
class PathRecords:
    """Record times/values of one trial path, per side."""

    up_t: np.ndarray
    up_v: np.ndarray
    dn_t: np.ndarray | None
    dn_v: np.ndarray | None
    length: int
    alarm: int  # first index at which h_stop was reached, -1 if capped


def simulate_path(config: DetectorConfig, stream: TrialStream, h_stop: float, cap: int,
                  start: int = 0, first_block: int = FIRST_BLOCK,
                  rank_origin: int | None = None) -> PathRecords:
    """Run a fresh detector on ``stream[start:]`` until ``h_stop`` or ``cap`` steps.

    Record times are relative to ``start``.  For rank schemes the rank memory
    starts at ``rank_origin`` (default ``start``), so an earlier origin lets a
    restarted statistic keep the ranks of the observations before the restart.
    """
    origin = start if rank_origin is None else rank_origin
    if not 0 <= origin <= start:
        raise SimulationError("rank_origin must lie in [0, start]")
    two = config.two_sided
    init = initial_statistic(config)
    up_state = (init, -np.inf)
    dn_state = (init, -np.inf)
    up_t, up_v, dn_t, dn_v = [], [], [], []
    done = 0
    n = min(first_block, cap)
    alarm = -1
    while True:
        if config.is_ssr:
            u = increments(config, stream.take(start + n)[origin:])[start - origin + done:]
        else:
            u = stream.take(start + n)[start + done:] / config.sigma
        s, b, t, v, a_up = scan_path(u, config.is_sr, config.zeta, up_state[0], up_state[1],
                                     h_stop, done)
        up_state = (s, b)
        up_t.append(t)
        up_v.append(v)
        a = a_up
        if two:
            s, b, t, v, a_dn = scan_path(-u, config.is_sr, config.zeta, dn_state[0], dn_state[1],
                                         h_stop, done)
            dn_state = (s, b)
            dn_t.append(t)
            dn_v.append(v)
            if a_dn > 0 and (a < 0 or a_dn < a):
                a = a_dn
        if a > 0:
            alarm = a
            length = a
            break
        if n >= cap:
            length = n
            break
        done = n
        n = min(2 * n, cap)
    cat = np.concatenate
    return PathRecords(cat(up_t), cat(up_v), cat(dn_t) if two else None,
                       cat(dn_v) if two else None, int(length), int(alarm))


@nb.njit(cache=True)
def _first_passage(times, values, offsets, h, cap):
    ntr = offsets.size - 1
    out = np.empty(ntr, np.int64)
    for k in range(ntr):
        n = cap
        for r in range(offsets[k], offsets[k + 1]):
            if values[r] >= h:
                n = times[r]
                break
        out[k] = n
    return out


def _flatten(parts):
    sizes = np.array([p.size for p in parts], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    flat = np.concatenate(parts) if parts else np.empty(0)
    return flat, offsets


@dataclass
class RecordSet:
    """Records for a batch of trials, queryable for any h <= h_stop."""

    config: DetectorConfig
    scenario: Scenario
    seed: int
    cap: int
    h_stop: float
    up_times: np.ndarray
    up_values: np.ndarray
    up_offsets: np.ndarray
    dn_times: np.ndarray | None = None
    dn_values: np.ndarray | None = None
    dn_offsets: np.ndarray | None = None
    lengths: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))

    @property
    def trials(self) -> int:
        return self.up_offsets.size - 1

    def run_lengths(self, h: float):
        """Run lengths (capped), truncation flags and directions at limit ``h``."""
        if h > self.h_stop + 1e-12:
            raise SimulationError(f"h = {h} lies above the simulated range (h_stop = {self.h_stop})")
        up = _first_passage(self.up_times, self.up_values, self.up_offsets, float(h), self.cap)
        if self.dn_times is None:
            n = up
            direction = np.ones(n.size, np.int8)
        else:
            dn = _first_passage(self.dn_times, self.dn_values, self.dn_offsets, float(h), self.cap)
            n = np.minimum(up, dn)
            direction = np.where(up <= dn, 1, -1).astype(np.int8)
        truncated = n >= self.cap
        # a path that reached the cap without crossing h counts as truncated
        return n, truncated, direction

    def summary(self, h: float) -> "RunLengthSummary":
        n, truncated, _ = self.run_lengths(h)
        return RunLengthSummary.from_samples(n, truncated_count=int(truncated.sum()),
                                             cap=self.cap, seed=self.seed, h=float(h))

    def mean(self, h: float) -> float:
        n, _, _ = self.run_lengths(h)
        return float(n.mean())


@dataclass(frozen=True)
class RunLengthSummary:
    """Monte Carlo estimate of a run-length functional."""

    mean: float
    std_error: float
    trials: int
    truncated_count: int
    cap: int
    seed: int
    discarded: int = 0
    h: float | None = None

    @classmethod
    def from_samples(cls, values, *, truncated_count=0, cap=0, seed=0, discarded=0, h=None):
        values = np.asarray(values, dtype=float)
        k = values.size
        if k == 0:
            raise SimulationError("no samples to summarise")
        se = float(values.std(ddof=1) / math.sqrt(k)) if k > 1 else math.nan
        return cls(float(values.mean()), se, int(k), int(truncated_count), int(cap), int(seed),
                   int(discarded), h)

    @property
    def truncated_fraction(self) -> float:
        return self.truncated_count / self.trials

    @property
    def discarded_fraction(self) -> float:
        total = self.trials + self.discarded
        return self.discarded / total if total else 0.0

    @property
    def flagged(self) -> bool:
        """Too many paths hit the cap for the mean to be trusted."""
        return self.truncated_fraction > 0.10

    def as_dict(self) -> dict:
        return {
            "mean": self.mean, "std_error": self.std_error, "trials": self.trials,
            "truncated_count": self.truncated_count, "cap": self.cap, "seed": self.seed,
            "discarded": self.discarded, "h": self.h,
        }


def _simulate_chunk(args):
    config, scenario, seed, lo, hi, h_stop, cap = args
    out = []
    for trial in range(lo, hi):
        stream = TrialStream(scenario, trial_rng(seed, trial))
        out.append(simulate_path(config, stream, h_stop, cap))
    return out


def map_trials(fn, config, scenario, seed, trials, workers, *extra):
    """Apply ``fn((config, scenario, seed, lo, hi, *extra))`` over trial chunks in order."""
    tasks = [(config, scenario, seed, lo, min(lo + TRIALS_PER_TASK, trials), *extra)
             for lo in range(0, trials, TRIALS_PER_TASK)]
    workers = resolve_workers(workers)
    if workers == 1 or len(tasks) == 1:
        chunks = [fn(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
            chunks = list(pool.map(fn, tasks))
    return [item for chunk in chunks for item in chunk]


def simulate_records(config: DetectorConfig, scenario: Scenario, trials: int, seed: int,
                     cap: int, h_stop: float | None = None, workers: int | None = None) -> RecordSet:
    """Simulate ``trials`` independent paths up to ``h_stop`` (default ``config.h``)."""
    if trials < 1:
        raise SimulationError("trials must be >= 1")
    if cap < 1:
        raise SimulationError("cap must be >= 1")
    h_stop = config.h if h_stop is None else float(h_stop)
    paths = map_trials(_simulate_chunk, config, scenario, seed, trials, workers, h_stop, cap)
    up_t, up_off = _flatten([p.up_t for p in paths])
    up_v, _ = _flatten([p.up_v for p in paths])
    rs = RecordSet(config, scenario, int(seed), int(cap), h_stop, up_t.astype(np.int64), up_v,
                   up_off, lengths=np.array([p.length for p in paths], dtype=np.int64))
    if config.two_sided:
        dn_t, dn_off = _flatten([p.dn_t for p in paths])
        dn_v, _ = _flatten([p.dn_v for p in paths])
        rs.dn_times, rs.dn_values, rs.dn_offsets = dn_t.astype(np.int64), dn_v, dn_off
    return rs
