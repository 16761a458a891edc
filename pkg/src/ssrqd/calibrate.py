"""In-control ARL estimation and control-limit calibration.

Control limits are found by coupled bisection: one batch of trial paths is
simulated far enough to bracket the target, and the in-control ARL at any
candidate h is then read off the same paths.  The estimate is therefore an
exactly monotone step function of h and the bisection is deterministic for a
given seed.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .distributions import DistributionSpec, Theta0Value
from .montecarlo import (NORMAL, RecordSet, RunLengthSummary, Scenario, default_cap,
                         simulate_records)
from .ranks import WILCOXON, ScoreFunction
from .schemes import DetectorConfig

H_MIN = 0.1
H_MAX = 60.0
DESK_TRIALS = 20_000


class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class CalibrationResult:
    zeta: float
    target_arl0: float
    h: float
    achieved: RunLengthSummary
    iterations: int
    h_std_error: float = math.nan
    path: tuple = field(default=(), repr=False)  # (h, ICARL) pairs visited by the bisection
    start_h: float | None = None

    @property
    def flagged(self) -> bool:
        """Calibration should not be accepted: too much truncation."""
        return self.achieved.truncated_fraction > 0.01


def estimate_icarl(config: DetectorConfig, dist: DistributionSpec = NORMAL, trials: int = DESK_TRIALS,
                   cap: int | None = None, seed: int = 0, workers: int | None = None,
                   multiplier: float = 1.0) -> RunLengthSummary:
    """Mean in-control run length of ``config`` over independent streams from ``dist``."""
    if trials < 100:
        raise CalibrationError("estimate_icarl needs at least 100 trials")
    cap = cap or default_cap(500)
    rs = simulate_records(config, Scenario(dist, multiplier=multiplier), trials, seed, cap,
                          workers=workers)
    return rs.summary(config.h)


def _bracket(config: DetectorConfig, scenario: Scenario, target: float, trials: int, seed: int,
             cap: int, workers, h_start: float | None) -> tuple[RecordSet, int]:
    """Simulate until the ICARL at h_stop reaches ``target``."""
    if h_start is None:
        h_start = math.log(target) if config.is_sr else 2.0
    h_stop = min(max(h_start, H_MIN + 0.5), H_MAX)
    sims = 0
    while True:
        rs = simulate_records(config.with_h(h_stop), scenario, trials, seed, cap, h_stop, workers)
        sims += 1
        m_hi = rs.mean(h_stop)
        if m_hi >= target:
            return rs, sims
        if h_stop >= H_MAX:
            raise CalibrationError(
                f"no control limit in [{H_MIN}, {H_MAX}] reaches ICARL {target} "
                f"(ICARL at {H_MAX} is {m_hi:.1f})")
        if sims >= 25:
            raise CalibrationError("simulation budget exhausted while bracketing")
        dh = min(0.5, h_stop - H_MIN)
        m_lo = rs.mean(h_stop - dh)
        slope = (math.log(m_hi) - math.log(m_lo)) / dh if m_lo > 0 and m_hi > m_lo else 0.0
        if slope > 0:
            step = 1.1 * (math.log(target) - math.log(m_hi)) / slope + 0.25
        else:
            step = 1.0
        h_stop = min(H_MAX, h_stop + min(max(step, 0.25), max(2.0, 0.5 * h_stop)))


def _bisect(rs: RecordSet, target: float, h_tol: float) -> tuple[float, int, list]:
    lo, hi = H_MIN, rs.h_stop
    path = [(hi, rs.mean(hi))]
    m_lo = rs.mean(lo)
    path.append((lo, m_lo))
    if m_lo >= target:
        raise CalibrationError(f"ICARL at h = {H_MIN} already exceeds {target}")
    it = 0
    while hi - lo > h_tol:
        mid = 0.5 * (lo + hi)
        m = rs.mean(mid)
        path.append((mid, m))
        it += 1
        if m >= target:
            hi = mid
        else:
            lo = mid
    return hi, it, path


def _h_std_error(rs: RecordSet, h: float, se_arl: float) -> float:
    eps = 0.05
    lo = max(H_MIN, h - eps)
    hi = min(rs.h_stop, h + eps)
    if hi <= lo:
        return math.nan
    slope = (rs.mean(hi) - rs.mean(lo)) / (hi - lo)
    return se_arl / slope if slope > 0 else math.nan


def _result_from_records(rs: RecordSet, zeta: float, target: float, rel_tol: float, h_tol: float,
                         sims: int, start_h=None) -> CalibrationResult:
    h, it, path = _bisect(rs, target, h_tol)
    achieved = rs.summary(h)
    tol = max(2 * achieved.std_error, rel_tol * target)
    if abs(achieved.mean - target) > tol:
        raise CalibrationError(
            f"achieved ICARL {achieved.mean:.1f} misses {target} by more than {tol:.1f}")
    return CalibrationResult(zeta, float(target), float(h), achieved, it + sims,
                             _h_std_error(rs, h, achieved.std_error), tuple(path), start_h)


def _make_config(family: str, zeta: float, score: ScoreFunction, sidedness: str,
                 h: float = 1.0) -> DetectorConfig:
    return DetectorConfig(family, zeta, h, score=score, sidedness=sidedness)


def find_control_limit(family: str, zeta: float, arl0: float, *, score: ScoreFunction = WILCOXON,
                       dist: DistributionSpec = NORMAL, sidedness: str = "upper",
                       trials: int = DESK_TRIALS, rel_tol: float = 0.05, seed: int = 0,
                       cap: int | None = None, workers: int | None = None,
                       h_start: float | None = None, h_tol: float = 1e-3) -> CalibrationResult:
    """Control limit giving in-control ARL ``arl0``."""
    if arl0 < 50:
        raise CalibrationError("arl0 must be >= 50")
    if rel_tol < 0.01:
        raise CalibrationError("rel_tol must be >= 0.01")
    config = _make_config(family, zeta, score, sidedness)
    cap = cap or default_cap(arl0)
    rs, sims = _bracket(config, Scenario(dist), arl0, trials, seed, cap, workers, h_start)
    return _result_from_records(rs, zeta, arl0, rel_tol, h_tol, sims, h_start)


def find_control_limits(family: str, zeta: float, arl0s, **kwargs) -> list[CalibrationResult]:
    """Calibrate several ARL targets for one zeta from a single batch of paths."""
    arl0s = sorted(float(a) for a in arl0s)
    if not arl0s or arl0s[0] < 50:
        raise CalibrationError("arl0 values must be >= 50")
    score = kwargs.pop("score", WILCOXON)
    dist = kwargs.pop("dist", NORMAL)
    sidedness = kwargs.pop("sidedness", "upper")
    trials = kwargs.pop("trials", DESK_TRIALS)
    rel_tol = kwargs.pop("rel_tol", 0.05)
    seed = kwargs.pop("seed", 0)
    cap = kwargs.pop("cap", None) or default_cap(arl0s[-1])
    workers = kwargs.pop("workers", None)
    h_tol = kwargs.pop("h_tol", 1e-3)
    h_start = kwargs.pop("h_start", None)
    if kwargs:
        raise TypeError(f"unexpected arguments {sorted(kwargs)}")
    config = _make_config(family, zeta, score, sidedness)
    rs, sims = _bracket(config, Scenario(dist), arl0s[-1], trials, seed, cap, workers, h_start)
    return [_result_from_records(rs, zeta, a, rel_tol, h_tol, sims) for a in arl0s]


def two_sided_limit(family: str, zeta: float, arl0: float, **kwargs) -> CalibrationResult:
    """Two-sided limit: start from the one-sided limit at 2 * arl0, then re-calibrate."""
    kwargs = dict(kwargs)
    kwargs.pop("sidedness", None)
    one = find_control_limit(family, zeta, 2 * arl0, sidedness="upper", **kwargs)
    kwargs.pop("h_start", None)
    kwargs.setdefault("cap", default_cap(arl0))
    res = find_control_limit(family, zeta, arl0, sidedness="two-sided", h_start=one.h, **kwargs)
    return CalibrationResult(res.zeta, res.target_arl0, res.h, res.achieved,
                             res.iterations + one.iterations, res.h_std_error, res.path, one.h)


def reference_value(delta1: float, theta0) -> float:
    """Reference value zeta = delta1 * theta0 / 2 for a target shift delta1."""
    if not delta1 > 0:
        raise CalibrationError("target shift must be positive")
    t = theta0.value if isinstance(theta0, Theta0Value) else float(theta0)
    return delta1 * t / 2.0


def misspecification_experiment(zeta: float, arl0: float, *, sigma_hat: float | None = None,
                                dist: DistributionSpec | None = None, h: float | None = None,
                                trials: int = DESK_TRIALS, seed: int = 0, cap: int | None = None,
                                workers: int | None = None) -> RunLengthSummary:
    """True ICARL of a normal S-R scheme tuned for N(0, 1) under a wrong assumption.

    Either the data are divided by a misestimated ``sigma_hat`` or they come
    from ``dist`` instead of the normal law.  Unless ``h`` is given, the limit
    is first calibrated on normal data with the same seed, so the scenario run
    reuses the calibration's random numbers.
    """
    if (sigma_hat is None) == (dist is None):
        raise CalibrationError("give exactly one of sigma_hat or dist")
    if sigma_hat is not None and not sigma_hat > 0:
        raise CalibrationError("sigma_hat must be positive")
    cap = cap or default_cap(arl0)
    if h is None:
        h = find_control_limit("normal-sr", zeta, arl0, trials=trials, seed=seed, cap=cap,
                               workers=workers).h
    config = DetectorConfig("normal-sr", zeta, h)
    if sigma_hat is not None:
        return estimate_icarl(config, NORMAL, trials, cap, seed, workers, multiplier=1.0 / sigma_hat)
    return estimate_icarl(config, dist, trials, cap, seed, workers)


# -- control limit tables -------------------------------------------------------------

@dataclass
class ControlLimitTable:
    """Grid of limits h(zeta, ARL0) with standard errors."""

    zetas: list
    arl0s: list
    h: np.ndarray
    se: np.ndarray

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["zeta"] + [_fmt_num(a) for a in self.arl0s])
        for i, z in enumerate(self.zetas):
            cells = [f"{self.h[i, j]:.3f}({self.se[i, j]:.3f})" for j in range(len(self.arl0s))]
            w.writerow([f"{z:.4g}"] + cells)
        return buf.getvalue()

    def write(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())

    @classmethod
    def from_csv(cls, text: str) -> "ControlLimitTable":
        rows = [r for r in csv.reader(io.StringIO(text)) if r]
        if not rows or rows[0][0].strip().lower() != "zeta":
            raise CalibrationError("control limit table must start with a 'zeta' header")
        try:
            arl0s = [float(a) for a in rows[0][1:]]
            zetas, hs, ses = [], [], []
            for r in rows[1:]:
                zetas.append(float(r[0]))
                hrow, serow = [], []
                for cell in r[1:]:
                    cell = cell.strip()
                    if "(" in cell:
                        hv, sv = cell.rstrip(")").split("(")
                        hrow.append(float(hv))
                        serow.append(float(sv))
                    else:
                        hrow.append(float(cell))
                        serow.append(math.nan)
                hs.append(hrow)
                ses.append(serow)
        except ValueError as exc:
            raise CalibrationError(f"malformed control limit table: {exc}") from None
        h = np.array(hs, dtype=float)
        if h.shape != (len(zetas), len(arl0s)):
            raise CalibrationError("ragged control limit table")
        order = np.argsort(zetas)
        aorder = np.argsort(arl0s)
        return cls([zetas[i] for i in order], [arl0s[j] for j in aorder],
                   h[np.ix_(order, aorder)], np.array(ses, dtype=float)[np.ix_(order, aorder)])

    @classmethod
    def read(cls, path) -> "ControlLimitTable":
        with open(path, newline="") as fh:
            return cls.from_csv(fh.read())

    def interpolate(self, zeta: float, arl0: float) -> float:
        """Bilinear in (zeta, log ARL0); exact at grid points, no extrapolation."""
        z = np.asarray(self.zetas, dtype=float)
        la = np.log(np.asarray(self.arl0s, dtype=float))
        x = math.log(arl0)
        if not (z[0] - 1e-12 <= zeta <= z[-1] + 1e-12 and la[0] - 1e-12 <= x <= la[-1] + 1e-12):
            raise CalibrationError(f"({zeta}, {arl0}) lies outside the table")
        i = _cell(z, zeta)
        j = _cell(la, x)
        tz = 0.0 if len(z) == 1 else (zeta - z[i]) / (z[i + 1] - z[i])
        ta = 0.0 if len(la) == 1 else (x - la[j]) / (la[j + 1] - la[j])
        i1 = min(i + 1, len(z) - 1)
        j1 = min(j + 1, len(la) - 1)
        h = self.h
        return float((1 - tz) * ((1 - ta) * h[i, j] + ta * h[i, j1])
                     + tz * ((1 - ta) * h[i1, j] + ta * h[i1, j1]))


def _cell(grid, value):
    if len(grid) == 1:
        return 0
    k = int(np.searchsorted(grid, value, side="right")) - 1
    return min(max(k, 0), len(grid) - 2)


def _fmt_num(a):
    return str(int(a)) if float(a).is_integer() else repr(float(a))


def control_limit_table(family: str, zetas, arl0s, **kwargs):
    """Calibrate a full (zeta x ARL0) grid.  Returns the table and the cell results."""
    zetas = [float(z) for z in zetas]
    arl0s = sorted(float(a) for a in arl0s)
    h = np.empty((len(zetas), len(arl0s)))
    se = np.empty_like(h)
    results = []
    for i, z in enumerate(zetas):
        cells = find_control_limits(family, z, arl0s, **kwargs)
        results.append(cells)
        for j, c in enumerate(cells):
            h[i, j] = c.h
            se[i, j] = c.h_std_error
    return ControlLimitTable(zetas, arl0s, h, se), results
