"""Signed sequential ranks and the normalised scores built from them.

For the i-th observation the sequential rank of its magnitude is

    r_plus = 1 + #{j < i : |x_j| < |x_i|}

and the signed sequential rank is ``sign(x_i) * r_plus / (i + 1)``, a value in
(-1, 1).  A score function J maps it to ``J(r_signed) / v_i`` where ``v_i`` is
the root mean square of J over the grid j / (i + 1), j = 1..i, which gives the
normalised score unit variance when the law is continuous and symmetric about 0.

Two code paths compute ranks: :class:`SequentialRankState` is a streaming
structure for online monitoring; :func:`sequential_ranks` is a batch Fenwick
tree kernel used by the Monte Carlo engine.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numba as nb
import numpy as np
from scipy import integrate
from sortedcontainers import SortedList

from ._normal import ndtri, ndtri_array

TIE_POLICIES = ("strict", "jitter")

# largest |J_V argument| handled before clamping the normal quantile
_VDW_CLAMP = 1.0 - 1e-15


class RankError(ValueError):
    pass


@dataclass(frozen=True)
class ScoreFunction:
    """An odd, square-integrable score function J on (-1, 1)."""

    kind: str
    func: Callable | None = field(default=None, compare=False)
    name: str | None = None

    def __post_init__(self):
        if self.kind not in ("wilcoxon", "vdw", "custom"):
            raise RankError(f"unknown score kind {self.kind!r}")
        if self.kind == "custom" and self.func is None:
            raise RankError("a custom score needs a callable")

    @classmethod
    def parse(cls, text: str) -> "ScoreFunction":
        key = text.strip().lower().replace("-", "").replace("_", "").replace(" ", "")
        if key in ("wilcoxon", "w"):
            return WILCOXON
        if key in ("vdw", "vanderwaerden", "normal", "v"):
            return VAN_DER_WAERDEN
        raise RankError(f"unknown score {text!r}; expected wilcoxon or vdw")

    @classmethod
    def custom(cls, func: Callable, name: str = "custom") -> "ScoreFunction":
        score = cls("custom", func, name)
        score.check()
        return score

    def __str__(self):
        return self.name or self.kind

    def J(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == "wilcoxon":
            return u.copy()
        if self.kind == "vdw":
            a = np.abs(u)
            if np.any(a > _VDW_CLAMP):
                warnings.warn("Van der Waerden score argument clamped near +/-1",
                              RuntimeWarning, stacklevel=2)
                a = np.minimum(a, _VDW_CLAMP)
            # built from |u| so the score is exactly odd
            return np.sign(u) * ndtri_array((1.0 + a) / 2.0)
        return np.asarray(self.func(u), dtype=float)

    def check(self, grid_size: int = 2001) -> None:
        """Raise if the score is not odd or not square integrable."""
        u = np.linspace(-1, 1, grid_size + 2)[1:-1]
        ju, jm = self.J(u), self.J(-u)
        if not np.all(np.isfinite(ju)):
            raise RankError(f"score {self} is not finite on (-1, 1)")
        if np.max(np.abs(ju + jm)) > 1e-12 * max(1.0, float(np.max(np.abs(ju)))):
            raise RankError(f"score {self} is not odd")
        if self.kind == "custom" and not math.isfinite(self.second_moment()):
            raise RankError(f"score {self} is not square integrable")

    def second_moment(self) -> float:
        """E[J(U)^2] for U uniform on (-1, 1)."""
        if self.kind == "wilcoxon":
            return 1.0 / 3.0
        if self.kind == "vdw":
            return 1.0
        val, err = integrate.quad(lambda t: float(self.J(np.array([t]))[0]) ** 2, 0.0, 1.0,
                                  limit=200)
        if not (math.isfinite(val) and err < 1e-6 * max(1.0, val)):
            return math.inf
        return val


WILCOXON = ScoreFunction("wilcoxon", name="wilcoxon")
VAN_DER_WAERDEN = ScoreFunction("vdw", name="vdw")


# -- normalisers --------------------------------------------------------------

@nb.njit(cache=True)
def _vdw_sq_means(start, stop):
    out = np.empty(stop - start)
    for k in range(start, stop):
        i = k + 1
        acc = 0.0
        for j in range(1, i + 1):
            q = ndtri(0.5 + 0.5 * j / (i + 1.0))
            acc += q * q
        out[k - start] = acc / i
    return out


_table_cache: dict[str, np.ndarray] = {}


def normalizer_table(score: ScoreFunction, n: int) -> np.ndarray:
    """``v_1 .. v_n`` as an array (index 0 holds v_1)."""
    if n < 1:
        raise RankError("n must be >= 1")
    i = np.arange(1, n + 1, dtype=float)
    if score.kind == "wilcoxon":
        return np.sqrt((2 * i + 1) / (6 * (i + 1)))
    if score.kind == "vdw":
        have = _table_cache.get("vdw", np.empty(0))
        if have.size < n:
            grow = max(n, 2 * have.size)
            have = np.concatenate([have, np.sqrt(_vdw_sq_means(have.size, grow))])
            _table_cache["vdw"] = have
        return have[:n].copy()
    return np.array([normalizer(score, k) for k in range(1, n + 1)])


def normalizer(score: ScoreFunction, i: int) -> float:
    """Root mean square of J over j / (i + 1), j = 1..i."""
    if i < 1:
        raise RankError("i must be >= 1")
    if score.kind == "wilcoxon":
        return math.sqrt((2 * i + 1) / (6 * (i + 1)))
    grid = np.arange(1, i + 1, dtype=float) / (i + 1)
    return math.sqrt(float(np.mean(score.J(grid) ** 2)))


def xi(r_signed: float, i: int, score: ScoreFunction = WILCOXON) -> float:
    """Normalised score J(r_signed) / v_i."""
    if not -1.0 < r_signed < 1.0:
        raise RankError(f"signed rank must lie in (-1, 1), got {r_signed}")
    return float(score.J(np.array([r_signed]))[0]) / normalizer(score, i)


# -- streaming state ------------------------------------------------------------

class RankUpdate(NamedTuple):
    sign: int
    r_plus: int
    r_signed: float


class SequentialRankState:
    """Online signed sequential ranks.

    Magnitudes are kept in a sorted list, so each update costs O(log i).
    ``tie_policy="strict"`` rejects exact zeros; ``"jitter"`` replaces the k-th
    zero by a deterministic subnormal value of alternating sign and records a
    warning.  Exact magnitude ties are counted as "not less than" and tallied in
    :attr:`ties`.
    """

    def __init__(self, tie_policy: str = "strict"):
        if tie_policy not in TIE_POLICIES:
            raise RankError(f"tie policy must be one of {TIE_POLICIES}")
        self.tie_policy = tie_policy
        self.reset()

    def reset(self):
        self._magnitudes = SortedList()
        self.count = 0
        self.ties = 0
        self.zero_jitters = 0
        self.warnings: list[str] = []

    def __len__(self):
        return self.count

    def update(self, x: float) -> RankUpdate:
        x = float(x)
        if not math.isfinite(x):
            raise RankError(f"non-finite observation {x!r}")
        if x == 0.0:
            if self.tie_policy == "strict":
                raise RankError(f"zero observation at index {self.count + 1} "
                                "(sign undefined under strict tie policy)")
            k = self.zero_jitters
            x = (1.0 if k % 2 == 0 else -1.0) * (k + 1) * 5e-324
            self.zero_jitters += 1
            self.warnings.append(f"zero at index {self.count + 1} jittered to {x!r}")
        m = abs(x)
        below = self._magnitudes.bisect_left(m)
        if self._magnitudes.bisect_right(m) > below:
            self.ties += 1
        self._magnitudes.add(m)
        self.count += 1
        r_plus = below + 1
        sign = 1 if x > 0 else -1
        return RankUpdate(sign, r_plus, sign * r_plus / (self.count + 1))


class XiStream:
    """Streaming normalised scores: observation in, J(R_i^s) / v_i out."""

    def __init__(self, score: ScoreFunction = WILCOXON, tie_policy: str = "strict"):
        self.score = score
        self.ranks = SequentialRankState(tie_policy)

    def reset(self):
        self.ranks.reset()

    def update(self, x: float) -> float:
        upd = self.ranks.update(x)
        return xi(upd.r_signed, self.ranks.count, self.score)


# -- batch kernels --------------------------------------------------------------

@nb.njit(cache=True, nogil=True)
def _ranks_from_order(x, a, order):
    n = x.size
    comp = np.empty(n, np.int64)
    k = 0
    for idx in range(n):
        if idx > 0 and a[order[idx]] != a[order[idx - 1]]:
            k += 1
        comp[order[idx]] = k + 1
    size = k + 1
    tree = np.zeros(size + 1, np.int64)
    r_plus = np.empty(n, np.int64)
    signs = np.empty(n, np.int64)
    for i in range(n):
        c = comp[i]
        below = 0
        j = c - 1
        while j > 0:
            below += tree[j]
            j -= j & -j
        r_plus[i] = below + 1
        j = c
        while j <= size:
            tree[j] += 1
            j += j & -j
        signs[i] = 1 if x[i] > 0 else (-1 if x[i] < 0 else 0)
    return signs, r_plus


def sequential_ranks(x):
    """Signs and sequential magnitude ranks of a whole sequence.

    Offline variant: magnitudes are coordinate-compressed once and inserted
    into a Fenwick tree in arrival order, O(n log n) overall.  Equal magnitudes
    share a compressed index, so ties count as "not less than".
    """
    x = np.ascontiguousarray(x, dtype=float)
    a = np.abs(x)
    return _ranks_from_order(x, a, np.argsort(a))


def signed_ranks(x) -> np.ndarray:
    """R_i^s for a whole sequence."""
    x = np.ascontiguousarray(x, dtype=float)
    signs, r_plus = sequential_ranks(x)
    return signs * r_plus / np.arange(2, x.size + 2)


def xi_sequence(x, score: ScoreFunction = WILCOXON) -> np.ndarray:
    """Normalised scores for a whole sequence (fresh rank memory)."""
    x = np.ascontiguousarray(x, dtype=float)
    if x.size == 0:
        return np.empty(0)
    return score.J(signed_ranks(x)) / normalizer_table(score, x.size)


def jitter_zeros(x):
    """Replace exact zeros the way :class:`SequentialRankState` does under ``"jitter"``.

    Returns the new array and one warning string per replaced zero.
    """
    x = np.array(x, dtype=float)
    notes = []
    for k, idx in enumerate(np.flatnonzero(x == 0.0)):
        x[idx] = (1.0 if k % 2 == 0 else -1.0) * (k + 1) * 5e-324
        notes.append(f"zero at index {idx + 1} jittered to {float(x[idx])!r}")
    return x, notes
