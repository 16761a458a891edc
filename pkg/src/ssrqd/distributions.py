"""Symmetric location families used as in-control and shifted laws.

Every law is a rescaled and shifted copy of a standard variate ``Z``::

    X = scale * Z + shift

where ``scale`` follows from the scale convention: ``var1`` (unit variance),
``iqr`` (unit interquartile range) or ``raw=<s>`` (an explicit multiplier of the
standard variate).  Specs round-trip through short config strings such as
``t3:iqr:shift=0.25``, ``laplace:var1`` or ``normal:raw=2.0``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np
from scipy import integrate, special

from ._normal import ndtr_array, ndtri_array

FAMILIES = ("normal", "logistic", "laplace", "t")
SCALE_CONVENTIONS = ("var1", "iqr", "raw")

_SQRT12 = math.sqrt(12.0)


class DistributionError(ValueError):
    pass


@dataclass(frozen=True)
class Theta0Value:
    """Efficiency constant sqrt(12) * integral of f**2, and how it was obtained."""

    value: float
    method: str  # "analytic", "quadrature" or "phase1"

    def __post_init__(self):
        if not self.value > 0:
            raise DistributionError(f"theta0 must be positive, got {self.value}")

    def __float__(self):
        return float(self.value)


@dataclass(frozen=True)
class DistributionSpec:
    family: str = "normal"
    df: int | None = None
    scale_convention: str = "var1"
    raw_scale: float = 1.0
    shift: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DistributionError(f"unknown family {self.family!r}")
        if self.family == "t":
            if self.df is None or int(self.df) != self.df or self.df < 1:
                raise DistributionError("Student t needs a positive integer df")
        elif self.df is not None:
            raise DistributionError(f"{self.family} takes no df")
        if self.scale_convention not in SCALE_CONVENTIONS:
            raise DistributionError(f"unknown scale convention {self.scale_convention!r}")
        if self.scale_convention == "var1" and self.family == "t" and self.df <= 2:
            raise DistributionError(
                f"t{self.df} has no finite variance; use the iqr scale convention")
        if self.scale_convention == "raw" and not self.raw_scale > 0:
            raise DistributionError("raw scale must be positive")
        if not math.isfinite(self.shift):
            raise DistributionError("shift must be finite")

    # -- construction helpers -------------------------------------------------

    @classmethod
    def parse(cls, text: str) -> "DistributionSpec":
        """Parse ``family[df][:scale][:shift=<x>]``."""
        parts = [p.strip() for p in text.strip().lower().split(":") if p.strip()]
        if not parts:
            raise DistributionError("empty distribution string")
        head, rest = parts[0], parts[1:]
        df = None
        if head.startswith("t") and head not in FAMILIES[:3]:
            digits = head[1:].lstrip("(").rstrip(")")
            if not digits.isdigit():
                raise DistributionError(f"bad Student t spec {head!r}")
            family, df = "t", int(digits)
        else:
            family = head
        kwargs = {}
        for item in rest:
            if item in ("var1", "iqr"):
                kwargs["scale_convention"] = item
            elif item.startswith("raw="):
                kwargs["scale_convention"] = "raw"
                kwargs["raw_scale"] = _parse_float(item[4:], text)
            elif item.startswith("shift="):
                kwargs["shift"] = _parse_float(item[6:], text)
            else:
                raise DistributionError(f"unrecognised token {item!r} in {text!r}")
        return cls(family=family, df=df, **kwargs)

    def __str__(self):
        name = f"t{self.df}" if self.family == "t" else self.family
        scale = (f"raw={self.raw_scale!r}" if self.scale_convention == "raw"
                 else self.scale_convention)
        text = f"{name}:{scale}"
        if self.shift:
            text += f":shift={self.shift!r}"
        return text

    def shifted(self, delta: float) -> "DistributionSpec":
        return replace(self, shift=self.shift + delta)

    def centered(self) -> "DistributionSpec":
        return replace(self, shift=0.0)

    # -- standard variate ------------------------------------------------------

    def _base_pdf(self, z):
        z = np.asarray(z, dtype=float)
        if self.family == "normal":
            return np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
        if self.family == "logistic":
            e = np.exp(-np.abs(z))
            return e / (1.0 + e) ** 2
        if self.family == "laplace":
            return 0.5 * np.exp(-np.abs(z))
        nu = self.df
        logc = (special.gammaln((nu + 1) / 2) - special.gammaln(nu / 2)
                - 0.5 * math.log(nu * math.pi))
        return np.exp(logc - (nu + 1) / 2 * np.log1p(z * z / nu))

    def _base_cdf(self, z):
        z = np.asarray(z, dtype=float)
        if self.family == "normal":
            return ndtr_array(z)
        if self.family == "logistic":
            return special.expit(z)
        if self.family == "laplace":
            return np.where(z < 0, 0.5 * np.exp(np.minimum(z, 0.0)),
                            1.0 - 0.5 * np.exp(-np.maximum(z, 0.0)))
        return special.stdtr(self.df, z)

    def _base_ppf(self, p):
        p = np.asarray(p, dtype=float)
        if self.family == "normal":
            return ndtri_array(p)
        if self.family == "logistic":
            return special.logit(p)
        if self.family == "laplace":
            with np.errstate(divide="ignore"):
                return np.where(p < 0.5, np.log(2 * p), -np.log(2 * (1 - p)))
        z = special.stdtrit(self.df, p)
        # one Newton polish step on the cdf
        with np.errstate(invalid="ignore", divide="ignore"):
            step = (special.stdtr(self.df, z) - p) / self._base_pdf(z)
        return np.where(np.isfinite(step), z - step, z)

    def _base_sample(self, rng: np.random.Generator, n: int):
        if self.family == "normal":
            return rng.standard_normal(n)
        if self.family == "logistic":
            return rng.logistic(size=n)
        if self.family == "laplace":
            return rng.laplace(size=n)
        return rng.standard_t(self.df, size=n)

    def _base_location_score(self, z):
        """-f'/f of the standard variate."""
        z = np.asarray(z, dtype=float)
        if self.family == "normal":
            return z
        if self.family == "logistic":
            return np.tanh(z / 2)
        if self.family == "laplace":
            return np.sign(z)
        nu = self.df
        return (nu + 1) * z / (nu + z * z)

    @cached_property
    def _base_variance(self):
        if self.family == "normal":
            return 1.0
        if self.family == "logistic":
            return math.pi ** 2 / 3
        if self.family == "laplace":
            return 2.0
        if self.df <= 2:
            return math.inf
        return self.df / (self.df - 2)

    @cached_property
    def _base_iqr(self):
        return float(2 * self._base_ppf(0.75))

    @cached_property
    def scale(self) -> float:
        """Multiplier applied to the standard variate."""
        if self.scale_convention == "var1":
            return 1.0 / math.sqrt(self._base_variance)
        if self.scale_convention == "iqr":
            return 1.0 / self._base_iqr
        return float(self.raw_scale)

    # -- public law ------------------------------------------------------------

    def pdf(self, x):
        return self._base_pdf((np.asarray(x, dtype=float) - self.shift) / self.scale) / self.scale

    def cdf(self, x):
        return self._base_cdf((np.asarray(x, dtype=float) - self.shift) / self.scale)

    def quantile(self, p):
        return self.shift + self.scale * self._base_ppf(p)

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.shift + self.scale * self._base_sample(rng, n)


def _parse_float(token: str, text: str) -> float:
    try:
        return float(token)
    except ValueError:
        raise DistributionError(f"bad number {token!r} in {text!r}") from None


def sample(spec: DistributionSpec, n: int, seed) -> np.ndarray:
    """Draw ``n`` independent observations; identical output for identical seed."""
    if n < 1:
        raise DistributionError("n must be >= 1")
    return spec.draw(np.random.default_rng(seed), int(n))


def _density_square_integral(spec: DistributionSpec, method: str) -> tuple[float, str]:
    """Integral of the squared standard density (before rescaling)."""
    if method == "auto":
        if spec.family == "normal":
            return 1.0 / (2.0 * math.sqrt(math.pi)), "analytic"
        if spec.family == "logistic":
            return 1.0 / 6.0, "analytic"
        if spec.family == "laplace":
            return 0.25, "analytic"
        nu = spec.df
        logc = (special.gammaln((nu + 1) / 2) - special.gammaln(nu / 2)
                - 0.5 * math.log(nu * math.pi))
        return math.exp(2 * logc + 0.5 * math.log(nu) + special.betaln(0.5, nu + 0.5)), "analytic"
    if method != "quadrature":
        raise DistributionError(f"unknown method {method!r}")
    val, err = integrate.quad(lambda z: float(spec._base_pdf(z)) ** 2, 0.0, np.inf,
                              epsabs=1e-11, epsrel=1e-11, limit=200)
    if not err < 1e-8:
        raise DistributionError(f"quadrature did not converge (error estimate {err:g})")
    return 2.0 * val, "quadrature"


def theta0(spec: DistributionSpec, method: str = "auto") -> Theta0Value:
    """sqrt(12) times the integral of f**2 for the in-control law ``spec``.

    ``method="quadrature"`` forces numerical integration even when a closed
    form is known.
    """
    if spec.shift != 0:
        raise DistributionError("theta0 is defined for the centred in-control law")
    integral, how = _density_square_integral(spec, method)
    return Theta0Value(_SQRT12 * integral / spec.scale, how)


def estimate_theta0_phase1(sample) -> Theta0Value:
    """Nonparametric theta0 from Phase I data.

    The integral of f**2 is estimated by averaging a leave-one-out Gaussian
    kernel density estimate over the sample points (Silverman bandwidth).
    """
    x = np.asarray(sample, dtype=float).ravel()
    n = x.size
    if n < 30:
        raise DistributionError(f"need at least 30 Phase I observations, got {n}")
    if not np.all(np.isfinite(x)):
        raise DistributionError("Phase I sample contains non-finite values")
    sd = x.std(ddof=1)
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34) if q75 > q25 else sd
    if not spread > 0:
        raise DistributionError("Phase I sample has zero spread")
    bw = 0.9 * spread * n ** -0.2

    total = 0.0
    chunk = max(1, 2_000_000 // n)
    for start in range(0, n, chunk):
        block = x[start:start + chunk, None] - x[None, :]
        total += np.exp(-0.5 * (block / bw) ** 2).sum()
    total -= n  # drop the i == j terms
    integral = total / (n * (n - 1) * bw * math.sqrt(2 * math.pi))
    return Theta0Value(_SQRT12 * integral, "phase1")


def score_correlation(score, spec: DistributionSpec, i: int | None = None) -> float:
    """Correlation between a score function and the efficient location score.

    With ``i=None`` this is the limiting value: both scores are evaluated at
    U = 2F(X) - 1 with X drawn from ``spec`` (U uniform on (-1, 1)) and the
    integrals are taken in x-space, which avoids the quantile singularities of
    heavy-tailed laws.

    With an integer ``i`` the correlation is the exact one at rank step i, where
    the signed rank is uniform on {+/- j / (i + 1) : j = 1..i}.
    """
    from .ranks import ScoreFunction

    if not isinstance(score, ScoreFunction):
        score = ScoreFunction.parse(score)
    if spec.shift != 0:
        raise DistributionError("score correlation is defined for the centred law")
    score.check()
    base = spec.centered()

    if i is not None:
        if i < 1:
            raise DistributionError("rank step must be >= 1")
        u = np.arange(1, i + 1) / (i + 1.0)
        j = score.J(u)
        psi = base._base_location_score(base._base_ppf((1.0 + u) / 2.0))
        return float(np.sum(j * psi) / math.sqrt(np.sum(j * j) * np.sum(psi * psi)))

    def j_of(z):
        u = 2.0 * float(base._base_cdf(z)) - 1.0
        return float(score.J(np.array([u]))[0])

    def quad(fn, lo, hi):
        val, err = integrate.quad(fn, lo, hi, epsabs=1e-12, epsrel=1e-10, limit=500)
        if not err < 1e-7:
            raise DistributionError(f"quadrature did not converge (error estimate {err:g})")
        return val

    # far in the tail 2F - 1 rounds to 1 and the VdW score clamps; the density
    # weight there is negligible, so the warning carries no information
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        cross = quad(lambda z: j_of(z) * float(base._base_location_score(z)) * float(base._base_pdf(z)),
                     0.0, np.inf)
    fisher = quad(lambda z: float(base._base_location_score(z)) ** 2 * float(base._base_pdf(z)),
                  0.0, np.inf)
    # half-line integrals: both integrands are even
    return 2.0 * cross / math.sqrt(2.0 * fisher * score.second_moment())
