"""Least-squares change-point estimate on a stopped sequence.

With T_k = sum_{i>k} x_i / sqrt(N - k), the estimate is the k in 1..N-1 that
maximises |T_k|, the smallest such k on exact ties.  The rank variant applies
the same formula to the Wilcoxon scores xi_i of the series.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .ranks import WILCOXON, xi_sequence

VARIANTS = ("raw", "rank")


class ChangePointError(ValueError):
    pass


@dataclass(frozen=True)
class ChangePointEstimate:
    tau_hat: int
    statistic_path: np.ndarray  # |T_k| for k = 1..N-1
    variant: str

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["k", "abs_T"])
            for k, v in enumerate(self.statistic_path, start=1):
                w.writerow([k, repr(float(v))])


def t_statistics(x) -> np.ndarray:
    """T_k for k = 1..N-1."""
    x = np.asarray(x, dtype=float)
    n = x.size
    # tail[k] = sum_{i>k} x_i with 1-based i, for k = 1..n-1
    tail = np.cumsum(x[::-1])[::-1][1:]
    return tail / np.sqrt(n - np.arange(1, n))


def estimate_tau(series, variant: str = "raw") -> ChangePointEstimate:
    x = np.asarray(series, dtype=float)
    if variant not in VARIANTS:
        raise ChangePointError(f"variant must be one of {VARIANTS}")
    if x.ndim != 1 or x.size < 3:
        raise ChangePointError("need a series of at least 3 observations")
    if not np.all(np.isfinite(x)):
        raise ChangePointError("series contains non-finite values")
    if variant == "rank":
        if np.any(x == 0):
            raise ChangePointError("zero observations have no sign; rank variant undefined")
        x = xi_sequence(x, WILCOXON)
    path = np.abs(t_statistics(x))
    # argmax returns the first (smallest k) maximiser
    return ChangePointEstimate(int(np.argmax(path)) + 1, path, variant)
