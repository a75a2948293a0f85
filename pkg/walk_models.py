"""
Increment laws of mean-zero lattice random walks.

A law is either a finite-support law given by exact rational probabilities,
or a symmetric power-tail law p(+-k) = k^(-alpha-1) / (2 zeta(alpha+1)), k >= 1,
which lies in the domain of attraction of a symmetric alpha-stable law.
"""

import math
import logging
from dataclasses import dataclass, field, replace
from fractions import Fraction
from functools import cached_property, reduce
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy import special

import settings
from errors import ConfigurationError, LawValidationError, UnsupportedLawError, TruncationError
from utils import parse_support

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class IncrementLaw:
    """Law of a single step X. Immutable; ``validated`` is set by ``validate``."""
    name: str
    support: Optional[Tuple[Tuple[int, Fraction], ...]] = None
    alpha: float = 2.0
    beta: float = 0.0
    symmetric: bool = True
    validated: bool = field(default=False, compare=False)

    @property
    def is_finite(self) -> bool:
        return self.support is not None

    @property
    def is_heavy_tailed(self) -> bool:
        return self.support is None

    @cached_property
    def values(self) -> np.ndarray:
        self._require_finite("support values")
        return np.array([v for v, _ in self.support], dtype=np.int64)

    @cached_property
    def probs(self) -> np.ndarray:
        self._require_finite("support probabilities")
        return np.array([float(p) for _, p in self.support], dtype=float)

    @cached_property
    def _cdf(self) -> np.ndarray:
        cdf = np.cumsum(self.probs)
        cdf[-1] = 1.0
        return cdf

    @property
    def min_jump(self) -> int:
        return int(self.values.min())

    @property
    def max_jump(self) -> int:
        return int(self.values.max())

    @property
    def exact_mean(self) -> Optional[Fraction]:
        if not self.is_finite:
            return Fraction(0) if self.symmetric else None
        return sum((v * p for v, p in self.support), Fraction(0))

    @property
    def mean(self) -> float:
        m = self.exact_mean
        return float(m) if m is not None else float("nan")

    @property
    def variance(self) -> float:
        if not self.is_finite:
            return math.inf
        m = self.exact_mean
        return float(sum((p * (v - m) ** 2 for v, p in self.support), Fraction(0)))

    @property
    def period(self) -> int:
        """Lattice period: gcd of pairwise differences of support points"""
        if not self.is_finite:
            return 1
        base = self.support[0][0]
        return reduce(math.gcd, (abs(v - base) for v, _ in self.support), 0) or 1

    @property
    def skip_free_down(self) -> bool:
        """Downward jumps are at most one unit, so every level is hit exactly on the way down"""
        return self.is_finite and self.min_jump >= -1

    def pmf(self, k: int) -> float:
        if self.is_finite:
            return float(dict(self.support).get(int(k), 0))
        if k == 0:
            return 0.0
        a = self.alpha + 1.0
        return abs(k) ** (-a) / (2.0 * special.zeta(a))

    def _require_finite(self, what: str):
        if not self.is_finite:
            raise UnsupportedLawError(f"{what} requested for heavy-tailed law {self.name}")


@dataclass
class ValidationReport:
    law_name: str
    valid: bool
    period: int
    issues: List[str]
    total_mass: Optional[Fraction] = None
    mean: Optional[float] = None
    variance: Optional[float] = None
    empirical_mean: Optional[float] = None
    empirical_stderr: Optional[float] = None
    law: Optional[IncrementLaw] = None

    @property
    def llt_eligible(self) -> bool:
        # per-step local limit diagnostics only make sense for aperiodic laws
        return self.period == 1


def _in_admissible_set(alpha: float, beta: float) -> bool:
    if alpha == 2.0:
        return beta == 0.0
    return 1.0 < alpha < 2.0 and -1.0 <= beta <= 1.0


def validate(law: IncrementLaw, mc_samples: int = 10**6, seed: int = 0) -> ValidationReport:
    """Check total mass, zero mean and the admissible (alpha, beta) set; report the lattice period"""
    issues = []
    report = ValidationReport(law_name=law.name, valid=False, period=law.period, issues=issues)

    if not _in_admissible_set(law.alpha, law.beta):
        issues.append(f"(alpha, beta) = ({law.alpha}, {law.beta}) outside the admissible set")

    if law.is_finite:
        total = sum((p for _, p in law.support), Fraction(0))
        report.total_mass = total
        if any(p < 0 for _, p in law.support):
            issues.append("negative probability")
        if total != 1:
            issues.append(f"total mass = {total} != 1")
        mean = law.exact_mean
        report.mean = float(mean)
        if mean != 0:
            issues.append(f"mean = {float(mean):g} != 0")
        report.variance = law.variance
        if len(law.support) < 2:
            issues.append("degenerate law (single support point)")
        if law.alpha != 2.0:
            issues.append(f"finite-support law must have alpha = 2, got {law.alpha}")
    else:
        if not law.symmetric or law.beta != 0.0:
            issues.append("only symmetric power-tail laws are provided")
        if not 1.0 < law.alpha < 2.0:
            issues.append(f"power-tail exponent alpha = {law.alpha} not in (1, 2)")
        if not issues:
            rng = np.random.default_rng(seed)
            draws = _sample_power_tail(law.alpha, rng, mc_samples).astype(float)
            emp_mean = float(draws.mean())
            stderr = float(draws.std(ddof=1) / math.sqrt(mc_samples))
            report.empirical_mean, report.empirical_stderr = emp_mean, stderr
            if abs(emp_mean) > 4.0 * stderr:
                issues.append(f"empirical mean {emp_mean:g} exceeds 4 standard errors ({stderr:g})")
        report.variance = math.inf

    report.valid = not issues
    if report.valid:
        report.law = replace(law, validated=True)
    return report


def ensure_valid(law: IncrementLaw, **kwargs) -> IncrementLaw:
    """Validated copy of ``law`` or LawValidationError carrying the report"""
    if law.validated:
        return law
    report = validate(law, **kwargs)
    if not report.valid:
        raise LawValidationError(f"Law {law.name} is invalid: {'; '.join(report.issues)}", report)
    return report.law


def _sample_power_tail(alpha: float, rng: np.random.Generator, size: int) -> np.ndarray:
    magnitude = rng.zipf(alpha + 1.0, size=size)
    sign = rng.integers(0, 2, size=size) * 2 - 1
    return magnitude * sign


def sample_increments(law: IncrementLaw, rng: np.random.Generator, size: int) -> np.ndarray:
    """Vector of i.i.d. increments (int64)"""
    if not law.validated:
        raise ConfigurationError(f"Law {law.name} must be validated before sampling")
    if law.is_finite:
        idx = np.searchsorted(law._cdf, rng.random(size), side="right")
        return law.values[idx]
    return _sample_power_tail(law.alpha, rng, size).astype(np.int64)


def sample_increment(law: IncrementLaw, rng: np.random.Generator) -> int:
    return int(sample_increments(law, rng, 1)[0])


# Norming

def norming_constant(law: IncrementLaw) -> float:
    """C with 1 - phi(t) ~ C |t|^alpha; sigma^2 / 2 for finite variance"""
    if law.is_finite:
        return law.variance / 2.0
    a = law.alpha
    tail_constant = 1.0 / (a * special.zeta(a + 1.0))    # P(|X| > x) ~ tail_constant * x^-alpha
    return tail_constant * special.gamma(1.0 - a) * math.cos(math.pi * a / 2.0)


def norming(law: IncrementLaw, n) -> float:
    """c(n): sigma sqrt(n) for finite variance, (C n)^(1/alpha) otherwise"""
    if np.any(np.asarray(n) < 1):
        raise ConfigurationError("norming requires n >= 1")
    if law.is_finite:
        return math.sqrt(law.variance) * np.sqrt(n)
    return (norming_constant(law) * np.asarray(n, dtype=float)) ** (1.0 / law.alpha)


def inverse_norming(law: IncrementLaw, N) -> float:
    """c^-1(N): N^2 / sigma^2 for finite variance, N^alpha / C otherwise"""
    if np.any(np.asarray(N) < 1):
        raise ConfigurationError("inverse_norming requires N >= 1")
    if law.is_finite:
        return np.asarray(N, dtype=float) ** 2 / law.variance
    return np.asarray(N, dtype=float) ** law.alpha / norming_constant(law)


def norming_calibration(law: IncrementLaw) -> str:
    if law.is_finite:
        return f"closed form c(n) = sigma sqrt(n), sigma^2 = {law.variance:g}"
    return (f"C = A Gamma(1-alpha) cos(pi alpha/2) = {norming_constant(law):.12g} "
            f"from the tail constant A = 1/(alpha zeta(alpha+1))")


# Heavy-tail helpers

def tail_probability(law: IncrementLaw, K: int) -> float:
    """P(|X| > K) from the exact pmf"""
    if law.is_finite:
        return float(law.probs[np.abs(law.values) > K].sum())
    a = law.alpha + 1.0
    return float(special.zeta(a, K + 1) / special.zeta(a))


def truncated_support(law: IncrementLaw, mass_loss: float = settings.HEAVY_TAIL_MASS_LOSS,
                      max_support: int = 10**6) -> Tuple[np.ndarray, np.ndarray]:
    """Renormalized law on {-K..K} with P(|X| > K) <= mass_loss"""
    if law.is_finite:
        return law.values.copy(), law.probs.copy()
    a = law.alpha
    tail_constant = 1.0 / (a * special.zeta(a + 1.0))
    # sum_{k>K} k^-(a+1) <= K^-a / a, so this radius is always sufficient
    K = int(math.ceil((mass_loss / tail_constant) ** (-1.0 / a)))
    if K > max_support:
        raise TruncationError(
            f"{law.name}: mass loss {mass_loss:g} needs support radius {K} > {max_support}", achieved=None)
    k = np.arange(1, K + 1, dtype=np.int64)
    half = k.astype(float) ** (-(a + 1.0))
    values = np.concatenate([-k[::-1], k])
    probs = np.concatenate([half[::-1], half])
    return values, probs / probs.sum()


# Bundled laws

def finite_law(name: str, support: Dict[int, Fraction]) -> IncrementLaw:
    atoms = tuple(sorted((int(v), Fraction(p)) for v, p in support.items() if Fraction(p) != 0))
    return IncrementLaw(name=name, support=atoms)


def power_tail_law(alpha: float, name: Optional[str] = None) -> IncrementLaw:
    return IncrementLaw(name=name or f"powertail-{alpha:g}", alpha=float(alpha))


def _bundled() -> Dict[str, IncrementLaw]:
    laws = [
        finite_law("simple", {-1: Fraction(1, 2), 1: Fraction(1, 2)}),
        finite_law("lazy", {-1: Fraction(1, 4), 0: Fraction(1, 2), 1: Fraction(1, 4)}),
        finite_law("wide4", {-3: Fraction(7, 36), -1: Fraction(1, 4), 0: Fraction(1, 9),
                             1: Fraction(1, 4), 3: Fraction(7, 36)}),
    ]
    laws = [replace(law, validated=True) for law in laws]
    for alpha in (1.2, 1.5, 1.8):
        laws.append(replace(power_tail_law(alpha), validated=True))
    return {law.name: law for law in laws}


BUNDLED_LAWS = _bundled()


def get_law(name: str) -> IncrementLaw:
    try:
        return BUNDLED_LAWS[name]
    except KeyError:
        raise ConfigurationError(f"Unknown law {name!r}; bundled laws: {', '.join(BUNDLED_LAWS)}")


def law_from_config(block: Dict[str, str]) -> IncrementLaw:
    """Law from a key-value block: ``name`` alone for a bundled law, or ``support`` / ``alpha``"""
    name = block.get("name", "custom").strip()
    if "support" in block:
        law = finite_law(name, parse_support(block["support"]))
    elif "alpha" in block:
        symmetric = block.get("symmetric", "true").strip().lower() in ("1", "true", "yes")
        law = IncrementLaw(name=name, alpha=float(block["alpha"]),
                           beta=float(block.get("beta", 0.0)), symmetric=symmetric)
    else:
        return get_law(name)
    return ensure_valid(law)


# Batched first exit

def first_exit(law: IncrementLaw, rng: np.random.Generator, starts, lower: Optional[int] = None,
               upper: Optional[int] = None, cap: int = settings.DEFAULT_STEP_CAP,
               batch_threshold: int = 64):
    """
    Run independent walks from ``starts`` until the first n >= 1 with S_n <= lower or S_n >= upper.

    Returns (exit positions, exit times, capped flags). Walks still inside after ``cap`` steps are
    flagged and keep their last position. The bulk is stepped in lockstep; once fewer than
    ``batch_threshold`` walks remain each survivor is finished on its own in growing chunks.
    """
    if lower is None and upper is None:
        raise ConfigurationError("first_exit needs at least one boundary")
    pos = np.array(starts, dtype=np.int64).reshape(-1)
    n = pos.size
    times = np.zeros(n, dtype=np.int64)
    done = np.zeros(n, dtype=bool)
    active = np.arange(n)
    step = 0

    while active.size > batch_threshold and step < cap:
        pos[active] += sample_increments(law, rng, active.size)
        step += 1
        times[active] = step
        exited = _outside(pos[active], lower, upper)
        done[active[exited]] = True
        active = active[~exited]

    for i in active:
        p, t, ok = _finish_single(law, rng, int(pos[i]), int(times[i]), lower, upper, cap)
        pos[i], times[i], done[i] = p, t, ok

    return pos, times, ~done


def _outside(x, lower, upper):
    out = np.zeros(np.shape(x), dtype=bool)
    if lower is not None:
        out |= x <= lower
    if upper is not None:
        out |= x >= upper
    return out


def _finish_single(law, rng, p, t, lower, upper, cap, chunk=256):
    while t < cap:
        m = min(chunk, cap - t)
        path = p + np.cumsum(sample_increments(law, rng, m))
        hit = _outside(path, lower, upper)
        if hit.any():
            k = int(np.argmax(hit))
            return int(path[k]), t + k + 1, True
        p, t = int(path[-1]), t + m
        chunk = min(chunk * 2, 1 << 20)
    return p, t, False
