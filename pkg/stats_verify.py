"""
Turns samples plus oracles into pass/fail verdicts.

Every check returns a TestReport whose ``passed`` flag is derived from its other fields:
p-value above the level, distance within a number of standard errors, or an absolute gap
within an allowance.
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from errors import DomainError, InsufficientSamplesError

logger = logging.getLogger(__name__)

GOF_LEVEL = 0.01
SIGMA_LIMIT = 4.0
MIN_EXPECTED = 5.0
ATOM_TOLERANCE = 1e-12


class Criterion(Enum):
    PVALUE = "p-value"          # p_value > threshold
    SIGMA = "sigma"             # sigma_distance <= threshold
    ALLOWANCE = "allowance"     # |statistic - reference| <= threshold


@dataclass
class TestReport:
    name: str
    statistic: float
    reference: float
    criterion: Criterion
    threshold: float
    p_value: Optional[float] = None
    sigma_distance: Optional[float] = None
    n: int = 0
    seed: Optional[int] = None
    detail: str = ""

    __test__ = False   # keep pytest from collecting this class

    @property
    def passed(self) -> bool:
        if self.criterion is Criterion.PVALUE:
            return self.p_value is not None and self.p_value > self.threshold
        if self.criterion is Criterion.SIGMA:
            return self.sigma_distance is not None and self.sigma_distance <= self.threshold
        return bool(abs(self.statistic - self.reference) <= self.threshold)

    def to_row(self) -> dict:
        row = asdict(self)
        row["criterion"] = self.criterion.value
        row["passed"] = self.passed
        return row


def _as_array(samples, name: str, minimum: int = 1) -> np.ndarray:
    arr = np.asarray(samples)
    if arr.ndim == 0 or arr.shape[0] < minimum:
        raise InsufficientSamplesError(f"{name}: need at least {minimum} samples, got {arr.size}")
    return arr


def sigma_report(name: str, estimate: float, stderr: float, reference: float, n: int,
                 sigmas: float = SIGMA_LIMIT, seed: Optional[int] = None, detail: str = "") -> TestReport:
    if stderr > 0:
        distance = abs(estimate - reference) / stderr
    else:
        distance = 0.0 if estimate == reference else math.inf
    return TestReport(name=name, statistic=float(estimate), reference=float(reference), criterion=Criterion.SIGMA,
                      threshold=sigmas, sigma_distance=float(distance), n=n, seed=seed,
                      detail=detail or f"stderr={stderr:.4g}")


def allowance_report(name: str, statistic: float, reference: float, allowance: float, n: int = 0,
                     seed: Optional[int] = None, detail: str = "") -> TestReport:
    return TestReport(name=name, statistic=float(statistic), reference=float(reference),
                      criterion=Criterion.ALLOWANCE, threshold=float(allowance), n=n, seed=seed, detail=detail)


# Fitting

@dataclass
class GeometricFit:
    p_hat: float
    stderr: float
    n: int
    mean: float


def fit_geometric(samples) -> GeometricFit:
    """MLE of p for a geometric law on {1, 2, ...}: 1/mean, delta-method stderr p sqrt((1-p)/n)"""
    arr = _as_array(samples, "fit_geometric").astype(float)
    if np.any(arr < 1):
        raise DomainError("fit_geometric needs samples >= 1")
    n = arr.size
    mean = float(arr.mean())
    p_hat = 1.0 / mean
    return GeometricFit(p_hat=p_hat, stderr=p_hat * math.sqrt(max(1.0 - p_hat, 0.0) / n), n=n, mean=mean)


# Goodness of fit

def continuize(samples, rng: np.random.Generator) -> np.ndarray:
    """Integer samples minus independent U(0, 1) noise; a geometric on {1, 2, ...} becomes nearly exponential"""
    arr = np.asarray(samples, dtype=float)
    return arr - rng.random(arr.size)


def _merge_bins(observed: np.ndarray, expected: np.ndarray, minimum: float = MIN_EXPECTED):
    obs_bins, exp_bins = [], []
    acc_o, acc_e = 0.0, 0.0
    for o, e in zip(observed, expected):
        acc_o += o
        acc_e += e
        if acc_e >= minimum:
            obs_bins.append(acc_o)
            exp_bins.append(acc_e)
            acc_o, acc_e = 0.0, 0.0
    if acc_e > 0 or acc_o > 0:
        if exp_bins:
            obs_bins[-1] += acc_o
            exp_bins[-1] += acc_e
        else:
            obs_bins.append(acc_o)
            exp_bins.append(acc_e)
    return np.array(obs_bins), np.array(exp_bins)


def chi_square_gof(samples, pmf, name: str = "chi-square", level: float = GOF_LEVEL, ddof: int = 0,
                   seed: Optional[int] = None) -> TestReport:
    """
    Integer samples against a pmf: an array indexed from 0 or a frozen scipy discrete law.
    The last bin collects the reference tail; bins are merged until every expectation is >= 5.
    """
    arr = _as_array(samples, name).astype(np.int64)
    n = arr.size
    if isinstance(pmf, (np.ndarray, list, tuple)):
        table = np.asarray(pmf, dtype=float)
        lower = 0

        def prob(k):
            return np.where(k < table.size, table[np.clip(k, 0, table.size - 1)], 0.0)
    else:
        lower = int(pmf.support()[0])
        prob = pmf.pmf
    if arr.min() < lower:
        return TestReport(name=name, statistic=math.inf, reference=0.0, criterion=Criterion.PVALUE,
                          threshold=level, p_value=0.0, n=n, seed=seed, detail="sample below reference support")

    top = int(arr.max())
    ks = np.arange(lower, top + 1)
    probs = np.asarray(prob(ks), dtype=float)
    expected = n * probs
    expected[-1] = n * max(1.0 - probs[:-1].sum(), 0.0)      # tail bin k >= top
    observed = np.bincount(arr - lower, minlength=ks.size).astype(float)
    if np.any((observed > 0) & (expected <= 0)):
        return TestReport(name=name, statistic=math.inf, reference=0.0, criterion=Criterion.PVALUE,
                          threshold=level, p_value=0.0, n=n, seed=seed, detail="sample outside reference support")
    if expected.sum() <= 0:
        raise InsufficientSamplesError(f"{name}: reference puts no mass on the sampled range")

    obs_bins, exp_bins = _merge_bins(observed, expected)
    if obs_bins.size < 2:
        if top == int(arr.min()) and float(prob(np.array([top]))[0]) >= 1.0 - ATOM_TOLERANCE:
            return TestReport(name=name, statistic=0.0, reference=float(n), criterion=Criterion.PVALUE,
                              threshold=level, p_value=1.0, n=n, seed=seed, detail="reference is a single atom")
        raise InsufficientSamplesError(f"{name}: {n} samples fill fewer than two bins with expectation >= "
                                       f"{MIN_EXPECTED:g}")
    exp_bins = exp_bins * obs_bins.sum() / exp_bins.sum()
    result = stats.chisquare(obs_bins, exp_bins, ddof=ddof)
    return TestReport(name=name, statistic=float(result.statistic), reference=float(obs_bins.size - 1 - ddof),
                      criterion=Criterion.PVALUE, threshold=level, p_value=float(result.pvalue), n=n, seed=seed,
                      detail=f"bins={obs_bins.size}")


def ks_gof(samples, cdf, name: str = "ks", level: float = GOF_LEVEL, seed: Optional[int] = None) -> TestReport:
    """Continuous samples against a cdf callable or frozen continuous law"""
    arr = _as_array(samples, name, minimum=2).astype(float)
    reference = cdf.cdf if hasattr(cdf, "cdf") else cdf
    result = stats.kstest(arr, reference)
    return TestReport(name=name, statistic=float(result.statistic), reference=0.0, criterion=Criterion.PVALUE,
                      threshold=level, p_value=float(result.pvalue), n=arr.size, seed=seed)


def gof_test(samples, reference, kind: str = "chi-square", **kwargs) -> TestReport:
    kind = kind.lower().replace("_", "-")
    if kind == "ks":
        return ks_gof(samples, reference, **kwargs)
    if kind in ("chi-square", "chi2"):
        return chi_square_gof(samples, reference, **kwargs)
    raise DomainError(f"unknown goodness-of-fit kind {kind!r}")


# Two-sample tests

def two_sample_chi2(a, b, name: str = "two-sample chi-square", level: float = GOF_LEVEL,
                    seed: Optional[int] = None) -> TestReport:
    """Integer samples: contingency table over values, adjacent values merged until expected counts >= 5"""
    a = _as_array(a, name).astype(np.int64)
    b = _as_array(b, name).astype(np.int64)
    lo = int(min(a.min(), b.min()))
    size = int(max(a.max(), b.max())) - lo + 1
    ca = np.bincount(a - lo, minlength=size).astype(float)
    cb = np.bincount(b - lo, minlength=size).astype(float)
    share = min(a.size, b.size) / (a.size + b.size)

    cols_a, cols_b = [], []
    acc_a = acc_b = 0.0
    for x, y in zip(ca, cb):
        acc_a += x
        acc_b += y
        if (acc_a + acc_b) * share >= MIN_EXPECTED:
            cols_a.append(acc_a)
            cols_b.append(acc_b)
            acc_a = acc_b = 0.0
    if acc_a or acc_b:
        if cols_a:
            cols_a[-1] += acc_a
            cols_b[-1] += acc_b
        else:
            cols_a.append(acc_a)
            cols_b.append(acc_b)
    n = a.size + b.size
    if len(cols_a) < 2:
        if size == 1:
            return TestReport(name=name, statistic=0.0, reference=0.0, criterion=Criterion.PVALUE, threshold=level,
                              p_value=1.0, n=n, seed=seed, detail="both samples sit on one value")
        raise InsufficientSamplesError(f"{name}: {n} samples fill fewer than two bins with expected count >= "
                                       f"{MIN_EXPECTED:g}")
    chi2, p_value, dof, _ = stats.chi2_contingency(np.array([cols_a, cols_b]), correction=False)
    return TestReport(name=name, statistic=float(chi2), reference=float(dof), criterion=Criterion.PVALUE,
                      threshold=level, p_value=float(p_value), n=n, seed=seed, detail=f"bins={len(cols_a)}")


def two_sample_ks(a, b, name: str = "two-sample ks", level: float = GOF_LEVEL, seed: Optional[int] = None) -> TestReport:
    a = _as_array(a, name, minimum=2).astype(float)
    b = _as_array(b, name, minimum=2).astype(float)
    result = stats.ks_2samp(a, b)
    return TestReport(name=name, statistic=float(result.statistic), reference=0.0, criterion=Criterion.PVALUE,
                      threshold=level, p_value=float(result.pvalue), n=a.size + b.size, seed=seed)


# Transforms and moments

def empirical_laplace(samples, lambdas):
    """Mean of exp(-lam x) per lam, with its standard error"""
    arr = _as_array(samples, "empirical_laplace").astype(float)
    if np.any(arr < 0):
        raise DomainError("Laplace transforms need nonnegative samples")
    lambdas = np.atleast_1d(np.asarray(lambdas, dtype=float))
    weights = np.exp(-np.outer(lambdas, arr))
    values = weights.mean(axis=1)
    stderr = weights.std(axis=1, ddof=1) / math.sqrt(arr.size) if arr.size > 1 else np.zeros_like(values)
    return values, stderr


def _bootstrap_stderr(values: np.ndarray, rng: np.random.Generator, rounds: int) -> float:
    means = np.array([values[rng.integers(0, values.size, values.size)].mean() for _ in range(rounds)])
    return float(means.std(ddof=1))


def moment_compare(samples, prediction: float, order: int = 1, sigmas: float = SIGMA_LIMIT,
                   relative_band: float = 0.0, name: Optional[str] = None, bootstrap: int = 0,
                   rng: Optional[np.random.Generator] = None, seed: Optional[int] = None) -> TestReport:
    """
    Empirical moment against a prediction. 1-d samples give E[X^order]; 2-d samples give the mixed
    moment E[prod of columns]. Passes when the gap is within ``sigmas`` standard errors plus
    ``relative_band`` * |prediction|.
    """
    arr = _as_array(samples, "moment_compare", minimum=2).astype(float)
    if arr.ndim == 1:
        if not 1 <= order <= 4:
            raise DomainError("moment order must be between 1 and 4")
        values = arr ** order
        label = f"E[X^{order}]"
    else:
        if arr.shape[1] > 4:
            raise DomainError("mixed moments are compared up to order 4")
        values = arr.prod(axis=1)
        label = f"mixed E[prod of {arr.shape[1]}]"
    estimate = float(values.mean())
    if bootstrap:
        stderr = _bootstrap_stderr(values, rng or np.random.default_rng(seed), bootstrap)
    else:
        stderr = float(values.std(ddof=1) / math.sqrt(values.size))
    allowance = sigmas * stderr + relative_band * abs(prediction)
    return allowance_report(name or label, estimate, prediction, allowance, n=values.size, seed=seed,
                            detail=f"stderr={stderr:.4g}, band={relative_band:g}")


def mean_check(samples, expected: float, name: str, sigmas: float = SIGMA_LIMIT,
               seed: Optional[int] = None) -> TestReport:
    arr = _as_array(samples, name, minimum=2).astype(float)
    return sigma_report(name, float(arr.mean()), float(arr.std(ddof=1) / math.sqrt(arr.size)), expected,
                        arr.size, sigmas, seed)


def proportion_check(successes: int, n: int, expected: float, name: str, sigmas: float = SIGMA_LIMIT,
                     seed: Optional[int] = None) -> TestReport:
    if n < 1:
        raise InsufficientSamplesError(f"{name}: no trials")
    phat = successes / n
    stderr = math.sqrt(expected * (1.0 - expected) / n)
    return sigma_report(name, phat, stderr, expected, n, sigmas, seed)


# Scaling

@dataclass
class SlopeFit:
    slope: float
    stderr: float
    intercept: float
    points: int = field(default=0)


def tail_slope(x_grid: Sequence[float], y_values: Sequence[float]) -> SlopeFit:
    """Least-squares slope of log y against log x"""
    x = np.asarray(x_grid, dtype=float)
    y = np.asarray(y_values, dtype=float)
    if x.size != y.size or x.size < 2:
        raise InsufficientSamplesError("tail_slope needs at least two (x, y) points")
    if np.any(x <= 0) or np.any(y <= 0):
        raise DomainError("tail_slope needs positive values")
    fit = stats.linregress(np.log(x), np.log(y))
    stderr = float(fit.stderr) if x.size > 2 else 0.0
    return SlopeFit(slope=float(fit.slope), stderr=stderr, intercept=float(fit.intercept), points=x.size)


def slope_report(name: str, fit: SlopeFit, expected: float, allowance: float, seed: Optional[int] = None) -> TestReport:
    return allowance_report(name, fit.slope, expected, allowance, n=fit.points, seed=seed,
                            detail=f"stderr={fit.stderr:.3g}")
