"""
Ladder heights and renewal functions.

chi+ is the strict ascending ladder height (S at the first n with S_n >= 1) and chi- the weak
descending one (-S at tau- = first n >= 1 with S_n <= 0). For finite-support laws both are
obtained exactly from the Wiener-Hopf factorisation of 1 - phi, read off the roots of
z^d (1 - phi(z)).
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from numpy.polynomial import polynomial as P

import settings
from errors import DivergentRenewalError, DomainError, TruncationError, UnsupportedLawError
from walk_models import IncrementLaw, first_exit

logger = logging.getLogger(__name__)

_ROOT_UNIT_TOL = 1e-6


class LadderKind(Enum):
    STRICT_ASCENDING = "strict-ascending"
    WEAK_DESCENDING = "weak-descending"


class CumulativeConvention(Enum):
    LE = "<="    # H(x) = sum_{y <= x} h(y)
    LT = "<"     # H(x) = sum_{y < x} h(y)


@dataclass(frozen=True)
class LadderLaw:
    kind: LadderKind
    pmf: np.ndarray
    residual: float = 0.0

    @property
    def zero_atom(self) -> float:
        return float(self.pmf[0])

    @property
    def mean(self) -> float:
        return float(np.dot(np.arange(self.pmf.size), self.pmf))

    @property
    def max_height(self) -> int:
        return int(self.pmf.size - 1)

    def prob(self, k: int) -> float:
        return float(self.pmf[k]) if 0 <= k < self.pmf.size else 0.0


@dataclass
class RenewalTable:
    h: np.ndarray
    H: np.ndarray
    convention: CumulativeConvention
    truncation_error: float
    kind: Optional[LadderKind] = None

    @property
    def x_max(self) -> int:
        return int(self.h.size - 1)

    def __call__(self, x: int) -> float:
        if x < 0 or x > self.x_max:
            raise DomainError(f"renewal table covers 0..{self.x_max}, requested {x}")
        return float(self.h[x])

    def cumulative(self, x: int) -> float:
        if x < 0 or x > self.x_max:
            raise DomainError(f"renewal table covers 0..{self.x_max}, requested {x}")
        return float(self.H[x])

    def to_rows(self) -> Tuple[List[str], List[list]]:
        """Header and rows (x, h, H, convention, truncation_error) for a CSV export"""
        rows = [[x, float(self.h[x]), float(self.H[x]), self.convention.value, float(self.truncation_error)]
                for x in range(self.h.size)]
        return ["x", "h", "H", "convention", "truncation_error"], rows


def _split_roots(law: IncrementLaw):
    """Roots of z^d (1 - phi(z)) other than the double root at 1, split by side of the unit circle"""
    d, u = -law.min_jump, law.max_jump
    coeffs = np.zeros(u + d + 1)
    coeffs[d] = 1.0
    coeffs[law.values + d] -= law.probs
    roots = P.polyroots(coeffs)

    # the double root at 1 comes back as a close pair
    nearest = np.argsort(np.abs(roots - 1.0))[:2]
    roots = np.delete(roots, nearest)

    modulus = np.abs(roots)
    outside = list(roots[modulus > 1.0 + _ROOT_UNIT_TOL])
    inside = list(roots[modulus < 1.0 - _ROOT_UNIT_TOL])
    on_circle = roots[np.abs(modulus - 1.0) <= _ROOT_UNIT_TOL]
    if on_circle.size:
        # periodic laws: other roots of unity appear in pairs, one factor takes each
        on_circle = on_circle[np.argsort(np.angle(on_circle))]
        outside.extend(on_circle[0::2])
        inside.extend(on_circle[1::2])
    return np.array(outside, dtype=complex), np.array(inside, dtype=complex)


def exact_ladder_pmf(law: IncrementLaw, kind: LadderKind, bound: Optional[int] = None) -> LadderLaw:
    """
    Exact law of the ladder height for a finite-support law.

    1 - E z^chi+ = (1 - z) prod_{|r|>1} (1 - z/r); 1 - E w^chi- = K (1 - w) prod_{|r|<1} (1 - w r)
    with K fixed by the w^d coefficient. ``bound`` caps the reported support; mass beyond it
    counts as residual.
    """
    if not law.is_finite:
        raise UnsupportedLawError(f"exact ladder law needs finite support, {law.name} is heavy-tailed")
    outside, inside = _split_roots(law)

    if kind is LadderKind.STRICT_ASCENDING:
        factor = np.array([1.0, -1.0], dtype=complex)
        for r in outside:
            factor = P.polymul(factor, [1.0, -1.0 / r])
        pmf = -np.real(factor)
        pmf[0] = 0.0
    else:
        factor = np.array([1.0, -1.0], dtype=complex)
        for r in inside:
            factor = P.polymul(factor, [1.0, -r])
        d = -law.min_jump
        K = -law.pmf(-d) / np.real(factor[d])
        pmf = -K * np.real(factor)
        pmf[0] = 1.0 - K

    pmf = np.where(np.abs(pmf) < 1e-15, 0.0, pmf)
    if bound is not None and bound + 1 < pmf.size:
        pmf = pmf[:bound + 1]
    residual = abs(1.0 - pmf.sum())
    if residual > settings.LADDER_RESIDUAL_TOL or pmf.min() < -settings.LADDER_RESIDUAL_TOL:
        raise TruncationError(
            f"{kind.value} ladder law of {law.name}: residual mass {residual:.3e} "
            f"(bound={bound}, support up to {pmf.size - 1})", achieved=residual)
    pmf = np.clip(pmf, 0.0, None)
    return LadderLaw(kind=kind, pmf=pmf, residual=residual)


def renewal_table(chi: LadderLaw, x_max: int,
                  convention: CumulativeConvention = CumulativeConvention.LE,
                  stop_mass: float = settings.RENEWAL_STOP_MASS) -> RenewalTable:
    """h(x) = sum_{k>=0} P(chi_1 + ... + chi_k = x) for x in 0..x_max, by repeated convolution"""
    if x_max < 0:
        raise DomainError("x_max must be >= 0")
    q = chi.zero_atom
    if q >= 1.0 - 1e-15:
        raise DivergentRenewalError(f"{chi.kind.value} ladder law is a point mass at 0")

    width = x_max + 1
    step = chi.pmf[:width]
    conv = np.zeros(width)
    conv[0] = 1.0
    h = conv.copy()
    mass, prev_mass, k = 1.0, 1.0, 0
    while mass >= stop_mass:
        conv = np.convolve(conv, step)[:width]
        k += 1
        prev_mass, mass = mass, float(conv.sum())
        h += conv

    # nonincreasing masses; bound the omitted tail geometrically from the last observed ratio
    ratio = min(max(mass / prev_mass if prev_mass > 0 else 0.0, q), 1.0 - 1e-12)
    truncation_error = mass * ratio / (1.0 - ratio)
    logger.debug(f"renewal table x_max={x_max}: {k} convolutions, tail bound {truncation_error:.2e}")

    if convention is CumulativeConvention.LE:
        H = np.cumsum(h)
    else:
        H = np.concatenate([[0.0], np.cumsum(h)[:-1]])
    return RenewalTable(h=h, H=H, convention=convention, truncation_error=truncation_error, kind=chi.kind)


def compute_U(x: int, N: int, h_plus: RenewalTable, chi_minus: LadderLaw,
              stop_mass: float = settings.RENEWAL_STOP_MASS) -> float:
    """U(x, N) = h+(N-x) + sum_{k>=1} E[h+(N - x + D_k); D_k < x], D_k = chi-_1 + ... + chi-_k"""
    if x < 0 or N < 1:
        raise DomainError(f"compute_U needs x >= 0 and N >= 1, got x={x}, N={N}")
    if x > N:
        raise DomainError(f"compute_U needs x <= N, got x={x}, N={N}")
    if h_plus.x_max < N:
        raise DomainError(f"h+ table covers 0..{h_plus.x_max}, U({x},{N}) needs index {N}")
    if chi_minus.zero_atom >= 1.0 - 1e-15:
        raise DivergentRenewalError("weak descending ladder law is a point mass at 0")

    total = h_plus(N - x)
    if x == 0:
        return total
    weights = h_plus.h[N - x:N]          # h+(N - x + s), s = 0..x-1
    step = chi_minus.pmf[:x]
    conv = np.zeros(x)
    conv[0] = 1.0
    while True:
        conv = np.convolve(conv, step)[:x]
        added = float(np.dot(conv, weights))
        total += added
        if conv.sum() < stop_mass:
            break
    return total



@dataclass
class LadderSample:
    kind: LadderKind
    heights: np.ndarray
    epoch_lengths: np.ndarray
    n_capped: int


def sample_ladder_heights(law: IncrementLaw, kind: LadderKind, count: int, rng: np.random.Generator,
                          cap: int = settings.DEFAULT_STEP_CAP) -> LadderSample:
    """Monte Carlo ladder heights; capped walks are excluded and counted"""
    starts = np.zeros(count, dtype=np.int64)
    if kind is LadderKind.STRICT_ASCENDING:
        pos, times, capped = first_exit(law, rng, starts, upper=1, cap=cap)
        heights = pos
    else:
        pos, times, capped = first_exit(law, rng, starts, lower=0, cap=cap)
        heights = -pos
    n_capped = int(capped.sum())
    if n_capped:
        logger.warning(f"⚠️ {n_capped}/{count} ladder epochs exceeded the step cap {cap}")
    keep = ~capped
    return LadderSample(kind=kind, heights=heights[keep], epoch_lengths=times[keep], n_capped=n_capped)


def ladder_moment_product(law: IncrementLaw) -> float:
    """E chi+ * E chi- (strict ascending times weak descending); sigma^2 / 2 for finite variance"""
    up = exact_ladder_pmf(law, LadderKind.STRICT_ASCENDING)
    down = exact_ladder_pmf(law, LadderKind.WEAK_DESCENDING)
    return up.mean * down.mean
