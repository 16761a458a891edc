import math

import numpy as np
import pytest
from scipy import integrate, stats

from ssrqd.distributions import (DistributionError, DistributionSpec, estimate_theta0_phase1,
                                 sample, score_correlation, theta0)
from ssrqd.ranks import VAN_DER_WAERDEN, WILCOXON

SPECS = ["normal", "logistic", "laplace", "t1:iqr", "t2:iqr", "t3", "t4", "t5:raw=2", "laplace:shift=0.5"]


def scipy_law(spec):
    """Independent oracle built from scipy.stats frozen distributions."""
    if spec.family == "normal":
        base = stats.norm()
    elif spec.family == "logistic":
        base = stats.logistic()
    elif spec.family == "laplace":
        base = stats.laplace()
    else:
        base = stats.t(spec.df)
    if spec.scale_convention == "var1":
        sc = 1 / math.sqrt(base.var())
    elif spec.scale_convention == "iqr":
        sc = 1 / (base.ppf(0.75) - base.ppf(0.25))
    else:
        sc = spec.raw_scale
    return base.dist(*base.args, loc=spec.shift, scale=sc)


@pytest.mark.parametrize("text", SPECS)
def test_against_scipy(text):
    spec = DistributionSpec.parse(text)
    ref = scipy_law(spec)
    x = np.linspace(-6, 6, 241)
    np.testing.assert_allclose(spec.pdf(x), ref.pdf(x), rtol=1e-10, atol=1e-14)
    np.testing.assert_allclose(spec.cdf(x), ref.cdf(x), rtol=1e-10, atol=1e-14)
    p = np.linspace(0.001, 0.999, 99)
    np.testing.assert_allclose(spec.quantile(p), ref.ppf(p), rtol=1e-9, atol=1e-10)


@pytest.mark.parametrize("text", SPECS)
def test_symmetry_and_roundtrip(text):
    spec = DistributionSpec.parse(text)
    x = np.linspace(0, 8, 81)
    np.testing.assert_allclose(spec.pdf(spec.shift + x), spec.pdf(spec.shift - x), atol=1e-12)
    p = np.linspace(1e-6, 1 - 1e-6, 201)
    np.testing.assert_allclose(spec.cdf(spec.quantile(p)), p, atol=1e-10)


def test_parse_roundtrip_and_errors():
    for text in SPECS:
        spec = DistributionSpec.parse(text)
        assert DistributionSpec.parse(str(spec)) == spec
    with pytest.raises(DistributionError):
        DistributionSpec.parse("t2")  # unit variance does not exist
    with pytest.raises(DistributionError):
        DistributionSpec.parse("cauchyish")


def test_sample_moments():
    x = sample(DistributionSpec("normal"), 1_000_000, seed=1)
    assert abs(x.mean()) < 4e-3
    assert abs(x.var() - 1) < 0.01
    y = sample(DistributionSpec.parse("laplace:shift=0.5"), 1_000_000, seed=2)
    assert abs(np.median(y) - 0.5) < 5e-3
    z = sample(DistributionSpec.parse("t2:iqr"), 1_000_000, seed=3)
    q75, q25 = np.percentile(z, [75, 25])
    assert abs((q75 - q25) - 1) < 0.01
    np.testing.assert_array_equal(sample(DistributionSpec("normal"), 10, 5),
                                  sample(DistributionSpec("normal"), 10, 5))
    with pytest.raises(DistributionError):
        sample(DistributionSpec("normal"), 0, 1)


@pytest.mark.parametrize("text", ["normal", "logistic", "laplace", "t4", "t3", "t2:iqr", "t1:iqr"])
def test_theta0_closed_form_vs_quadrature(text):
    spec = DistributionSpec.parse(text)
    ref = scipy_law(spec)
    sq, _ = integrate.quad(lambda v: ref.pdf(v) ** 2, -np.inf, np.inf, epsabs=1e-12)
    expected = math.sqrt(12) * sq
    assert theta0(spec).value == pytest.approx(expected, rel=1e-8)
    assert theta0(spec, "quadrature").value == pytest.approx(expected, rel=1e-8)


def test_theta0_known_values():
    assert theta0(DistributionSpec("normal")).value == pytest.approx(math.sqrt(3 / math.pi))
    assert theta0(DistributionSpec("laplace")).value == pytest.approx(math.sqrt(6) / 2)
    assert theta0(DistributionSpec("logistic")).value == pytest.approx(math.pi / 3)
    with pytest.raises(DistributionError):
        theta0(DistributionSpec.parse("normal:shift=1"))


def test_phase1_estimate():
    for text in ("normal", "laplace"):
        spec = DistributionSpec.parse(text)
        est = estimate_theta0_phase1(sample(spec, 5000, seed=11))
        assert est.method == "phase1"
        assert est.value == pytest.approx(theta0(spec).value, rel=0.05)
    with pytest.raises(DistributionError):
        estimate_theta0_phase1(np.ones(50))
    with pytest.raises(DistributionError):
        estimate_theta0_phase1(np.arange(10.0))


def test_score_correlation_oracles():
    # VdW is the efficient score for the normal law
    assert score_correlation(VAN_DER_WAERDEN, DistributionSpec("normal")) == pytest.approx(1, abs=1e-9)
    # Wilcoxon is efficient for the logistic law
    assert score_correlation(WILCOXON, DistributionSpec("logistic")) == pytest.approx(1, abs=1e-9)
    # Wilcoxon vs normal: sqrt(3/pi) in closed form; vs Cauchy: sqrt(6)/pi
    assert score_correlation(WILCOXON, DistributionSpec("normal")) == pytest.approx(math.sqrt(3 / math.pi), abs=1e-8)
    assert score_correlation(WILCOXON, DistributionSpec.parse("t1:iqr")) == pytest.approx(math.sqrt(6) / math.pi, abs=1e-8)
    # scale invariance
    a = score_correlation(WILCOXON, DistributionSpec.parse("t3"))
    b = score_correlation(WILCOXON, DistributionSpec.parse("t3:raw=1"))
    assert a == pytest.approx(b, abs=1e-10)


def test_finite_rank_correlation_converges():
    spec = DistributionSpec.parse("t3")
    limit = score_correlation(WILCOXON, spec)
    vals = [score_correlation(WILCOXON, spec, i=i) for i in (100, 1000, 10000)]
    errs = [abs(v - limit) for v in vals]
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 5e-3


def test_theta0_scale_equivariance():
    one = theta0(DistributionSpec.parse("t5:raw=1")).value
    two = theta0(DistributionSpec.parse("t5:raw=2")).value
    assert two == pytest.approx(one / 2, rel=1e-12)


def test_score_correlation_invariant_to_score_scaling():
    from ssrqd.ranks import ScoreFunction
    spec = DistributionSpec.parse("t4")
    a = score_correlation(ScoreFunction.custom(lambda u: u ** 3, "cube"), spec)
    b = score_correlation(ScoreFunction.custom(lambda u: 5 * u ** 3, "cube5"), spec)
    assert a == pytest.approx(b, abs=1e-12)


@pytest.mark.parametrize("text", ["normal", "logistic", "laplace", "t3"])
def test_first_order_shift_of_2F_minus_1(text):
    spec = DistributionSpec.parse(text)
    delta = 0.01
    y = sample(spec, 1_000_000, seed=12) + delta
    v = 2 * spec.cdf(y) - 1
    sq = theta0(spec).value / math.sqrt(12)  # integral of f^2
    se = v.std(ddof=1) / math.sqrt(v.size)
    assert abs(v.mean() - 2 * delta * sq) <= 3 * se
