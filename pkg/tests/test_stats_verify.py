import math

import numpy as np
import pytest
from scipy import stats

from errors import DomainError, InsufficientSamplesError
from stats_verify import (Criterion, TestReport, allowance_report, chi_square_gof, continuize, empirical_laplace,
                          fit_geometric, gof_test, ks_gof, mean_check, moment_compare, proportion_check,
                          sigma_report, slope_report, tail_slope, two_sample_chi2, two_sample_ks)


def test_fit_geometric():
    fit = fit_geometric([1, 1, 2, 4])
    assert fit.mean == 2.0
    assert fit.p_hat == 0.5
    assert fit.stderr == pytest.approx(0.5 * math.sqrt(0.5 / 4))
    with pytest.raises(DomainError):
        fit_geometric([0, 2])
    with pytest.raises(InsufficientSamplesError):
        fit_geometric([])


def test_fit_geometric_recovers_rate(rng):
    draws = rng.geometric(0.2, size=20000)
    fit = fit_geometric(draws)
    assert abs(fit.p_hat - 0.2) <= 4 * fit.stderr


def test_chi_square_against_scipy_law(rng):
    draws = rng.geometric(0.3, size=5000)
    assert chi_square_gof(draws, stats.geom(0.3)).passed
    assert not chi_square_gof(draws, stats.geom(0.5)).passed


def test_chi_square_against_array(rng):
    pmf = np.array([0.2, 0.5, 0.3])
    draws = rng.choice(3, size=4000, p=pmf)
    report = chi_square_gof(draws, pmf)
    assert report.criterion is Criterion.PVALUE
    assert report.n == 4000
    assert report.passed


def test_chi_square_support_mismatch():
    outside = chi_square_gof([0, 1, 5, 1], np.array([0.5, 0.5]))
    assert outside.p_value == 0.0 and not outside.passed
    below = chi_square_gof([0, 1, 2], stats.geom(0.5))
    assert not below.passed


def test_chi_square_single_atom():
    report = chi_square_gof([3, 3, 3], np.array([0.0, 0.0, 0.0, 1.0]))
    assert report.passed
    assert report.detail == "reference is a single atom"


def test_chi_square_too_few_samples():
    with pytest.raises(InsufficientSamplesError):
        chi_square_gof([1, 7, 40], stats.geom(0.01))
    with pytest.raises(InsufficientSamplesError):
        chi_square_gof([0, 1], np.array([0.5, 0.5]))


def test_ks(rng):
    draws = rng.exponential(2.0, size=3000)
    assert ks_gof(draws, stats.expon(scale=2.0)).passed
    assert not ks_gof(draws, lambda x: 1.0 - np.exp(-x)).passed
    with pytest.raises(InsufficientSamplesError):
        ks_gof([1.0], stats.expon())


def test_gof_dispatch(rng):
    draws = rng.exponential(1.0, size=500)
    assert gof_test(draws, stats.expon(), kind="KS").name == "ks"
    assert gof_test(draws.astype(int), stats.poisson(1.0), kind="chi_square").name == "chi-square"
    with pytest.raises(DomainError):
        gof_test(draws, stats.expon(), kind="anderson")


def test_two_sample_tests(rng):
    a = rng.poisson(3.0, size=3000)
    b = rng.poisson(3.0, size=3000)
    c = rng.poisson(4.0, size=3000)
    assert two_sample_chi2(a, b).passed
    assert not two_sample_chi2(a, c).passed
    x = rng.normal(size=2000)
    assert two_sample_ks(x, rng.normal(size=2000)).passed
    assert not two_sample_ks(x, rng.normal(0.5, 1.0, size=2000)).passed


def test_two_sample_chi2_constant_samples():
    report = two_sample_chi2([2, 2, 2], [2, 2])
    assert report.passed and report.p_value == 1.0


def test_two_sample_chi2_too_few_samples():
    with pytest.raises(InsufficientSamplesError):
        two_sample_chi2([0, 0, 0], [9, 9, 9])
    with pytest.raises(InsufficientSamplesError):
        two_sample_chi2([1, 2], [1, 2])


def _pass_rate(check, repetitions=100):
    return sum(check(np.random.default_rng(1000 + i)).passed for i in range(repetitions)) / repetitions


@pytest.mark.parametrize("kind", ["chi-square", "ks", "two-sample chi-square", "two-sample ks"])
def test_self_tests_are_calibrated(kind):
    checks = {
        "chi-square": lambda g: chi_square_gof(g.geometric(0.3, size=500), stats.geom(0.3)),
        "ks": lambda g: ks_gof(g.exponential(2.0, size=500), stats.expon(scale=2.0)),
        "two-sample chi-square": lambda g: two_sample_chi2(g.poisson(3.0, size=500), g.poisson(3.0, size=500)),
        "two-sample ks": lambda g: two_sample_ks(g.exponential(2.0, size=500), g.exponential(2.0, size=500)),
    }
    assert _pass_rate(checks[kind]) >= 0.95


def test_exponential_rate_half_calibration(rng):
    draws = rng.exponential(2.0, size=5000)
    assert gof_test(draws, stats.expon(scale=2.0), kind="ks").passed
    assert not gof_test(draws, stats.expon(scale=1.0), kind="ks").passed


def test_empirical_laplace(rng):
    values, stderr = empirical_laplace([0, 0, 0], [0.5, 2.0])
    np.testing.assert_array_equal(values, [1.0, 1.0])
    np.testing.assert_array_equal(stderr, [0.0, 0.0])
    draws = rng.exponential(1.0, size=10000)
    values, stderr = empirical_laplace(draws, 1.0)
    assert abs(values[0] - 0.5) <= 4 * stderr[0]
    with pytest.raises(DomainError):
        empirical_laplace([-1.0, 2.0], 1.0)


def test_moment_compare_one_dimensional(rng):
    draws = rng.exponential(1.0, size=5000)
    assert moment_compare(draws, 1.0).passed
    assert moment_compare(draws, 2.0, order=2).passed
    assert not moment_compare(draws, 1.5).passed
    assert moment_compare(draws, 1.1, relative_band=0.2).passed
    with pytest.raises(DomainError):
        moment_compare(draws, 1.0, order=5)


def test_moment_compare_bootstrap(rng):
    draws = rng.exponential(1.0, size=5000)
    report = moment_compare(draws, 2.0, order=2, bootstrap=200, rng=np.random.default_rng(9))
    assert report.criterion is Criterion.ALLOWANCE
    assert report.passed


def test_moment_compare_mixed(rng):
    cols = rng.normal(1.0, 0.5, size=(8000, 2))
    report = moment_compare(cols, 1.0)
    assert report.name == "mixed E[prod of 2]"
    assert report.passed
    with pytest.raises(DomainError):
        moment_compare(rng.normal(size=(10, 5)), 0.0)


def test_constant_samples_match_exactly():
    assert moment_compare([3.0, 3.0, 3.0], 3.0).passed
    assert not moment_compare([3.0, 3.0, 3.0], 3.5).passed


def test_mean_and_proportion_checks(rng):
    assert mean_check(rng.normal(2.0, 1.0, size=1000), 2.0, "mean").passed
    assert proportion_check(480, 1000, 0.5, "coin").passed
    assert not proportion_check(400, 1000, 0.5, "coin").passed
    with pytest.raises(InsufficientSamplesError):
        proportion_check(0, 0, 0.5, "empty")
    with pytest.raises(InsufficientSamplesError):
        mean_check([1.0], 1.0, "one")


def test_tail_slope():
    x = np.array([1.0, 2.0, 4.0, 8.0])
    fit = tail_slope(x, 3.0 * x ** -1.5)
    assert fit.slope == pytest.approx(-1.5)
    assert fit.intercept == pytest.approx(math.log(3.0))
    assert fit.points == 4
    assert slope_report("slope", fit, -1.5, 0.01).passed
    assert not slope_report("slope", fit, -1.0, 0.1).passed
    assert tail_slope([1.0, 2.0], [1.0, 0.5]).stderr == 0.0
    with pytest.raises(DomainError):
        tail_slope([1.0, 2.0], [1.0, 0.0])
    with pytest.raises(InsufficientSamplesError):
        tail_slope([1.0], [1.0])


def test_report_criteria():
    assert TestReport("p", 1.0, 0.0, Criterion.PVALUE, 0.01, p_value=0.2).passed
    assert not TestReport("p", 1.0, 0.0, Criterion.PVALUE, 0.01).passed
    assert sigma_report("s", 1.0, 0.5, 2.0, 10).passed
    assert not sigma_report("s", 1.0, 0.1, 2.0, 10).passed
    assert sigma_report("s", 2.0, 0.0, 2.0, 10).passed
    assert sigma_report("s", 2.1, 0.0, 2.0, 10).sigma_distance == math.inf
    assert allowance_report("a", 1.05, 1.0, 0.1).passed
    assert not allowance_report("a", 1.2, 1.0, 0.1).passed


def test_report_row():
    row = sigma_report("mean", 1.0, 0.5, 1.0, 10, seed=7).to_row()
    assert row["criterion"] == "sigma"
    assert row["passed"] is True
    assert row["seed"] == 7


def test_continuize_bounds(rng):
    draws = rng.geometric(0.1, size=1000)
    smooth = continuize(draws, rng)
    assert smooth.shape == draws.shape
    assert np.all(smooth <= draws) and np.all(smooth > draws - 1)
