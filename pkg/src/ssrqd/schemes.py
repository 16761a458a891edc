"""CUSUM and Shiryaev-Roberts detectors, parametric and signed-sequential-rank.

All four schemes are driven by an increment sequence u_1, u_2, ...:
``x / sigma`` for the normal schemes and the normalised rank score ``xi`` for
the SSR schemes.  With reference value ``zeta``:

    CUSUM:  C_i = max(0, C_{i-1} + u_i - zeta),                 alarm C_i >= h
    S-R:    D_i = log(1 + exp(D_{i-1})) + 2 zeta (u_i - zeta),  alarm D_i >= h

with C_0 = 0 and D_0 = -inf (E_0 = exp(D_0) = 0).  The S-R statistic is kept
as D_i = log E_i throughout, which is overflow free.

A two-sided scheme runs the same detector on x and on -x and stops at the
earlier of the two alarms (ties are reported as "up").
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, NamedTuple

import numba as nb
import numpy as np

from .ranks import WILCOXON, ScoreFunction, XiStream, xi_sequence

FAMILIES = ("normal-cusum", "normal-sr", "ssr-cusum", "ssr-sr")
SIDEDNESS = ("upper", "two-sided")


class SchemeError(ValueError):
    pass


class AlarmedError(SchemeError):
    """Raised when a strict-mode detector is stepped after its alarm."""


@dataclass(frozen=True)
class DetectorConfig:
    family: str
    zeta: float
    h: float
    score: ScoreFunction = WILCOXON
    sidedness: str = "upper"
    sigma: float = 1.0
    tie_policy: str = "strict"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise SchemeError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if self.sidedness not in SIDEDNESS:
            raise SchemeError(f"sidedness must be one of {SIDEDNESS}")
        if not math.isfinite(self.zeta) or self.zeta < 0:
            raise SchemeError("zeta must be a finite nonnegative number")
        if self.zeta == 0 and self.family != "ssr-cusum":
            raise SchemeError(f"zeta = 0 is only meaningful for ssr-cusum, not {self.family}")
        if not math.isfinite(self.h):
            raise SchemeError("control limit must be finite")
        if self.is_cusum and self.h < 0:
            raise SchemeError("CUSUM control limit must be >= 0")
        if not self.sigma > 0:
            raise SchemeError("sigma must be positive")

    @property
    def is_sr(self) -> bool:
        return self.family.endswith("-sr")

    @property
    def is_cusum(self) -> bool:
        return self.family.endswith("-cusum")

    @property
    def is_ssr(self) -> bool:
        return self.family.startswith("ssr-")

    @property
    def two_sided(self) -> bool:
        return self.sidedness == "two-sided"

    def with_h(self, h: float) -> "DetectorConfig":
        return replace(self, h=h)

    def label(self) -> str:
        name = self.family + (f"/{self.score}" if self.is_ssr else "")
        return name + (" two-sided" if self.two_sided else "")


@dataclass
class DetectorState:
    """Running statistic: C_i for CUSUM, D_i = log E_i for S-R."""

    statistic: float
    step: int = 0
    alarmed_at: int | None = None

    @property
    def E(self) -> float:
        """exp(D_i) for S-R detectors (may overflow to inf)."""
        return math.exp(self.statistic) if self.statistic < 709 else math.inf


def initial_statistic(config: DetectorConfig) -> float:
    return -math.inf if config.is_sr else 0.0


@nb.njit(cache=True, inline="always")
def _log1pexp(d):
    if d > 0.0:
        return d + math.log1p(math.exp(-d))
    return math.log1p(math.exp(d))


def update_statistic(config: DetectorConfig, statistic: float, u: float) -> float:
    z = config.zeta
    if config.is_sr:
        return _log1pexp(statistic) + 2.0 * z * (u - z)
    return max(0.0, statistic + u - z)


class Detector:
    """One-sided streaming detector.

    ``mode="strict"`` raises :class:`AlarmedError` when stepped after an alarm;
    ``mode="monitor"`` freezes the statistic instead.
    """

    def __init__(self, config: DetectorConfig, mode: str = "strict", sign: float = 1.0):
        if mode not in ("strict", "monitor"):
            raise SchemeError("mode must be 'strict' or 'monitor'")
        self.config = config
        self.mode = mode
        self.sign = sign
        self._xi = XiStream(config.score, config.tie_policy) if config.is_ssr else None
        self.state = DetectorState(initial_statistic(config))
        self.last_input = math.nan

    def reset(self):
        self.state = DetectorState(initial_statistic(self.config))
        if self._xi is not None:
            self._xi.reset()

    @property
    def rank_state(self):
        return None if self._xi is None else self._xi.ranks

    def increment(self, x: float) -> float:
        x = self.sign * float(x)
        if not math.isfinite(x):
            raise SchemeError(f"non-finite observation {x!r}")
        if self._xi is not None:
            return self._xi.update(x)
        return x / self.config.sigma

    def step(self, x: float) -> DetectorState:
        st = self.state
        if st.alarmed_at is not None:
            if self.mode == "strict":
                raise AlarmedError(f"detector already alarmed at step {st.alarmed_at}")
            return st
        u = self.increment(x)
        self.last_input = u
        stat = update_statistic(self.config, st.statistic, u)
        step = st.step + 1
        alarmed = step if stat >= self.config.h else None
        self.state = DetectorState(stat, step, alarmed)
        return self.state


# -- batch kernels ------------------------------------------------------------------

@nb.njit(cache=True, nogil=True)
def scan_path(inputs, is_sr, zeta, stat, best, h_stop, t0):
    """Advance a detector over ``inputs`` collecting running-maximum records.

    Returns the final statistic, the running maximum, the record times and
    values (times are 1-based and offset by ``t0``) and the first index at which
    the statistic reached ``h_stop`` (-1 if it did not).
    """
    n = inputs.size
    rec_t = np.empty(n, np.int64)
    rec_v = np.empty(n)
    m = 0
    alarm = -1
    two_zeta = 2.0 * zeta
    for k in range(n):
        u = inputs[k]
        if is_sr:
            stat = _log1pexp(stat) + two_zeta * (u - zeta)
        else:
            stat = stat + u - zeta
            if stat < 0.0:
                stat = 0.0
        if stat > best:
            best = stat
            rec_t[m] = t0 + k + 1
            rec_v[m] = stat
            m += 1
        if stat >= h_stop:
            alarm = t0 + k + 1
            break
    return stat, best, rec_t[:m].copy(), rec_v[:m].copy(), alarm


@nb.njit(cache=True, nogil=True)
def statistic_path(inputs, is_sr, zeta):
    """Full statistic path (no stopping)."""
    out = np.empty(inputs.size)
    stat = -np.inf if is_sr else 0.0
    for k in range(inputs.size):
        u = inputs[k]
        if is_sr:
            stat = _log1pexp(stat) + 2.0 * zeta * (u - zeta)
        else:
            stat = max(0.0, stat + u - zeta)
        out[k] = stat
    return out


def increments(config: DetectorConfig, x) -> np.ndarray:
    """Scheme inputs for a whole sequence: x / sigma or the rank scores."""
    x = np.ascontiguousarray(x, dtype=float)
    if config.is_ssr:
        return xi_sequence(x, config.score)
    return x / config.sigma


# -- run-length API -------------------------------------------------------------------

class RunLengthOutcome(NamedTuple):
    n: int
    truncated: bool
    no_alarm: bool = False
    path: np.ndarray | None = None


class TwoSidedOutcome(NamedTuple):
    n: int
    direction: str | None
    truncated: bool
    no_alarm: bool = False
    tie: bool = False


def _check_stream(x):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise SchemeError("stream contains non-finite values")
    return x


def _zero_check(config, x):
    if config.is_ssr and config.tie_policy == "strict":
        zeros = np.flatnonzero(x == 0) + 1
        if zeros.size:
            raise SchemeError(f"zero observations at indices {zeros.tolist()[:20]} "
                              "under strict tie policy")


def _streaming_first_alarm(config, stream: Iterable[float], cap: int, sign=1.0):
    det = Detector(config, sign=sign)
    for x in stream:
        st = det.step(x)
        if st.alarmed_at is not None:
            return st.alarmed_at, False
        if st.step >= cap:
            return cap, False
    return det.state.step, True


def run(config: DetectorConfig, stream, cap: int, keep_path: bool = False) -> RunLengthOutcome:
    """Run length of a one-sided detector on ``stream`` (truncated at ``cap``).

    Sequences are processed in one batch; other iterables are consumed lazily.
    If a finite stream ends before an alarm and before ``cap`` the outcome has
    ``no_alarm=True``.
    """
    if cap < 1:
        raise SchemeError("cap must be >= 1")
    if not isinstance(stream, (np.ndarray, list, tuple)):
        if config.is_ssr and config.tie_policy != "strict":
            raise SchemeError("lazy streams support the strict tie policy only")
        n, exhausted = _streaming_first_alarm(config, stream, cap)
        return RunLengthOutcome(n, truncated=(n >= cap and not exhausted), no_alarm=exhausted)
    x = _check_stream(stream)[:cap]
    _zero_check(config, x)
    u = increments(config, x)
    *_, alarm = scan_path(u, config.is_sr, config.zeta, initial_statistic(config),
                          -np.inf, config.h, 0)
    path = None
    if keep_path:
        stop = alarm if alarm > 0 else x.size
        path = statistic_path(u[:stop], config.is_sr, config.zeta)
    if alarm > 0:
        return RunLengthOutcome(int(alarm), False, False, path)
    if x.size >= cap:
        return RunLengthOutcome(cap, True, False, path)
    return RunLengthOutcome(int(x.size), False, True, path)


def two_sided_run(config: DetectorConfig, stream, cap: int) -> TwoSidedOutcome:
    """min(N+, N-) for detectors on x and -x sharing zeta and h."""
    if not config.two_sided:
        raise SchemeError("two_sided_run needs sidedness='two-sided'")
    x = _check_stream(stream)[:cap]
    _zero_check(config, x)
    u = increments(config, x)
    init = initial_statistic(config)
    *_, up = scan_path(u, config.is_sr, config.zeta, init, -np.inf, config.h, 0)
    *_, dn = scan_path(-u, config.is_sr, config.zeta, init, -np.inf, config.h, 0)
    if up < 0 and dn < 0:
        if x.size >= cap:
            return TwoSidedOutcome(cap, None, True)
        return TwoSidedOutcome(int(x.size), None, False, no_alarm=True)
    if dn < 0 or (up > 0 and up <= dn):
        return TwoSidedOutcome(int(up), "up", False, tie=(up == dn))
    return TwoSidedOutcome(int(dn), "down", False)


def sr_closed_form(xis, zeta: float, log: bool = False) -> float:
    """E_i written as a sum over the partial sums S_j of the inputs.

    E_i = sum_{j=0}^{i-1} exp(2 zeta (S_i - S_j) - 2 zeta^2 (i - j)),  S_0 = 0,

    which is what the S-R recursion started from E_0 = 0 unrolls to.  Evaluated
    with a log-sum-exp so long or strongly drifting sequences do not overflow.
    """
    u = np.asarray(xis, dtype=float)
    if u.size == 0:
        raise SchemeError("need at least one input")
    i = u.size
    s = np.concatenate([[0.0], np.cumsum(u)])
    j = np.arange(i)
    expo = 2 * zeta * (s[i] - s[j]) - 2 * zeta ** 2 * (i - j)
    top = expo.max()
    logE = top + math.log(np.exp(expo - top).sum())
    return logE if log else math.exp(logE)


def write_path_csv(path, config: DetectorConfig, x, max_steps: int | None = None) -> None:
    """Dump step, input, xi, statistic and alarm flag for every observation."""
    x = _check_stream(x)
    if max_steps is not None:
        x = x[:max_steps]
    u = increments(config, x)
    up = statistic_path(u, config.is_sr, config.zeta)
    dn = statistic_path(-u, config.is_sr, config.zeta) if config.two_sided else None
    header = ["step", "input", "xi", "statistic", "alarmed"]
    if dn is not None:
        header.insert(4, "statistic_lower")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        fired = False
        for k in range(x.size):
            fired = fired or up[k] >= config.h or (dn is not None and dn[k] >= config.h)
            row = [k + 1, repr(float(x[k])), repr(float(u[k])) if config.is_ssr else "",
                   repr(float(up[k]))]
            if dn is not None:
                row.append(repr(float(dn[k])))
            row.append(int(fired))
            w.writerow(row)
