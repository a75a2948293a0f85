"""
Limit-side quantities: the Green density a(u, v), Kac moment predictions, exponential limit laws
and the marginal and joint Laplace transforms of the limiting local-time field.

For alpha = 2 the density is a(u, v) = 2 min(u, v) and the limiting field is a squared Bessel
process of dimension 0 indexed by level.
"""

import logging
import math
from dataclasses import dataclass
from itertools import permutations
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate, stats
from scipy.interpolate import RegularGridInterpolator

from errors import ConfigurationError, DomainError, QuadratureError, UnsupportedOrderError
from ladder_renewal import RenewalTable
from walk_models import IncrementLaw

logger = logging.getLogger(__name__)

MAX_KAC_ORDER = 8
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


# Green density

def a_20_closed(u: float, v: float) -> float:
    if u < 0 or v < 0:
        raise DomainError("a(u, v) needs u, v >= 0")
    return 2.0 * min(u, v)


def a_20_quadrature(u: float, v: float, tolerance: float = 1e-8) -> float:
    """
    (2 pi)^-1/2 int_0^inf x^-1/2 exp(-(u-v)^2 / 2x) (1 - exp(-2uv/x)) dx, split at x = 1;
    the tail is mapped to (0, 1] by y = 1/x. Both pieces carry an algebraic y^-1/2 weight.
    """
    if u <= 0 or v <= 0:
        raise DomainError("a_20_quadrature needs u, v > 0")
    d2, uv = (u - v) ** 2, u * v

    def near(x):
        if x <= 0.0:
            return 1.0 if d2 == 0.0 else 0.0
        return math.exp(-d2 / (2.0 * x)) * -math.expm1(-2.0 * uv / x)

    def tail(y):
        if y <= 0.0:
            return 2.0 * uv
        return math.exp(-d2 * y / 2.0) * -math.expm1(-2.0 * uv * y) / y

    total, error = 0.0, 0.0
    for piece in (near, tail):
        value, err = integrate.quad(piece, 0.0, 1.0, weight="alg", wvar=(-0.5, 0.0),
                                    epsabs=tolerance / 10.0, epsrel=0.0, limit=200)
        total += value
        error += err
    total *= _INV_SQRT_2PI
    error *= _INV_SQRT_2PI
    if error > tolerance:
        raise QuadratureError(f"a_20_quadrature({u}, {v}): error estimate {error:.2e} > {tolerance:g}",
                              estimate=total, error=error)
    return total


def psi_20(a, b):
    """psi(a, b) = g(b - a) (1 - exp(-2ab)) with g the standard normal density"""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return stats.norm.pdf(b - a) * -np.expm1(-2.0 * a * b)


@dataclass
class PsiTable:
    """psi on a rectangular grid starting at 0, bilinear in between"""
    a_grid: np.ndarray
    b_grid: np.ndarray
    values: np.ndarray
    alpha: float
    far_density: Optional[Callable] = None   # psi = density(b - a) beyond the grid

    def __post_init__(self):
        if self.values.shape != (self.a_grid.size, self.b_grid.size):
            raise ConfigurationError("psi table shape does not match its grid")
        if np.any(self.values < 0):
            raise ConfigurationError("psi table has negative entries")
        self._interp = RegularGridInterpolator((self.a_grid, self.b_grid), self.values,
                                               bounds_error=False, fill_value=np.nan)

    @property
    def a_max(self) -> float:
        return float(self.a_grid[-1])

    @property
    def b_max(self) -> float:
        return float(self.b_grid[-1])

    @property
    def step(self) -> float:
        return float(min(np.diff(self.a_grid).min(), np.diff(self.b_grid).min()))

    def __call__(self, a, b) -> np.ndarray:
        a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
        out = self._interp(np.column_stack([a.ravel(), b.ravel()])).reshape(a.shape)
        outside = np.isnan(out)
        if outside.any():
            if self.far_density is None:
                raise DomainError(f"psi requested outside the table [0, {self.a_max}] x [0, {self.b_max}]")
            out[outside] = self.far_density(b[outside] - a[outside])
        return out


def exact_psi_table_20(a_max: float = 6.0, step: float = 0.01) -> PsiTable:
    grid = np.linspace(0.0, a_max, int(round(a_max / step)) + 1)
    A, B = np.meshgrid(grid, grid, indexing="ij")
    return PsiTable(a_grid=grid, b_grid=grid.copy(), values=psi_20(A, B), alpha=2.0,
                    far_density=stats.norm.pdf)


def load_psi_table(path, alpha: float, far_density: Optional[Callable] = None) -> PsiTable:
    """CSV with header a,b,psi on a full rectangular grid"""
    data = np.genfromtxt(path, delimiter=",", names=True)
    try:
        a, b, psi = data["a"], data["b"], data["psi"]
    except (ValueError, KeyError):
        raise ConfigurationError(f"{path}: expected columns a, b, psi")
    a_grid, a_idx = np.unique(a, return_inverse=True)
    b_grid, b_idx = np.unique(b, return_inverse=True)
    if a_grid.size * b_grid.size != psi.size:
        raise ConfigurationError(f"{path}: psi table is not a full rectangular grid")
    values = np.empty((a_grid.size, b_grid.size))
    values[a_idx, b_idx] = psi
    return PsiTable(a_grid=a_grid, b_grid=b_grid, values=values, alpha=alpha, far_density=far_density)


def a_generic_quadrature(u: float, v: float, psi: PsiTable, alpha: Optional[float] = None,
                         tolerance: float = 1e-4) -> float:
    """
    a(u, v) = int_0^inf x^(-1/alpha) psi(u x^(-1/alpha), v x^(-1/alpha)) dx
            = int_0^inf alpha t^-alpha psi(ut, vt) dt.

    The table part is integrated with a fine midpoint rule; beyond the table either the far
    density is used (psi reduces to the density there) or the omitted mass must be below tolerance.
    """
    alpha = psi.alpha if alpha is None else alpha
    if not 1.0 < alpha <= 2.0:
        raise DomainError(f"alpha must lie in (1, 2], got {alpha}")
    if u < 0 or v < 0:
        raise DomainError("a(u, v) needs u, v >= 0")
    if u == 0 or v == 0:
        return 0.0

    T = min(psi.a_max / u, psi.b_max / v)
    n = int(math.ceil(T * 8.0 * max(u, v) / psi.step))
    t = (np.arange(n) + 0.5) * (T / n)
    inner = float(np.sum(alpha * t ** -alpha * psi(u * t, v * t)) * (T / n))

    if psi.far_density is not None:
        far, _ = integrate.quad(lambda s: alpha * s ** -alpha * float(psi.far_density(s * (v - u))),
                                T, np.inf, epsabs=tolerance / 10.0, limit=200)
        return inner + far

    sup = float(psi.values.max())
    omitted = sup * alpha * T ** (1.0 - alpha) / (alpha - 1.0)
    if omitted > tolerance:
        T_needed = (sup * alpha / ((alpha - 1.0) * tolerance)) ** (1.0 / (alpha - 1.0))
        raise DomainError(
            f"psi table too small for a({u}, {v}): omitted mass up to {omitted:.2e}; "
            f"need a up to {u * T_needed:.3g} and b up to {v * T_needed:.3g}")
    return inner


# Limit model

@dataclass(frozen=True)
class LimitModel:
    alpha: float
    beta: float
    a: Optional[Callable[[float, float], float]]
    sigma2: Optional[float] = None

    @property
    def c_const(self) -> float:
        """c = 1 / a(1, 1)"""
        if self.a is None:
            raise ConfigurationError(f"no Green density available for alpha = {self.alpha}; supply a psi table")
        return 1.0 / self.a(1.0, 1.0)


def limit_model_for(law: IncrementLaw, psi: Optional[PsiTable] = None) -> LimitModel:
    if law.is_finite:
        return LimitModel(alpha=2.0, beta=0.0, a=a_20_closed, sigma2=law.variance)
    a = None
    if psi is not None:
        def a(u, v, _psi=psi, _alpha=law.alpha):
            return a_generic_quadrature(u, v, _psi, _alpha)
    return LimitModel(alpha=law.alpha, beta=law.beta, a=a)


def resolve_rate(model: LimitModel) -> float:
    """Exponential rate of L / N for finite variance (sigma^2 / 2); c in units of c^-1(N) / N otherwise"""
    if model.sigma2 is not None and math.isfinite(model.sigma2):
        return model.sigma2 / 2.0
    return model.c_const


def exponential_limit_sf(x, rate: float):
    if rate <= 0:
        raise DomainError("rate must be positive")
    return np.exp(-np.maximum(np.asarray(x, dtype=float), 0.0) * rate)


# Kac moments

def _check_order(m: int):
    if m < 1:
        raise DomainError("moment order must be >= 1")
    if m > MAX_KAC_ORDER:
        raise UnsupportedOrderError(f"Kac sums are enumerated up to order {MAX_KAC_ORDER}, got {m}")


def kac_moment_value(u0: float, u_list: Sequence[float], a: Callable = a_20_closed) -> float:
    """sum over orderings sigma of a(u0, u_s1) prod a(u_si, u_si+1)"""
    _check_order(len(u_list))
    total = 0.0
    for order in permutations(u_list):
        term = a(u0, order[0])
        for left, right in zip(order[:-1], order[1:]):
            term *= a(left, right)
        total += term
    return total


def kac_from_zero(u_list: Sequence[float], a: Callable, h_plus: RenewalTable, N: int, c_inv_N: float) -> float:
    """(c^-1(N) / N)^(m-1) sum_sigma h+(u_s1 N) prod a(u_si, u_si+1)"""
    m = len(u_list)
    _check_order(m)
    total = 0.0
    for order in permutations(u_list):
        term = h_plus(int(math.floor(order[0] * N)))
        for left, right in zip(order[:-1], order[1:]):
            term *= a(left, right)
        total += term
    return (c_inv_N / N) ** (m - 1) * total


def ordered_visit_limit(u0: float, chain: Sequence[float], a: Callable = a_20_closed) -> float:
    """a(u0, u1) prod a(u_i, u_i+1): limit of the rescaled ordered-visit moment"""
    if not chain:
        raise DomainError("chain must be nonempty")
    value = a(u0, chain[0])
    for left, right in zip(chain[:-1], chain[1:]):
        value *= a(left, right)
    return value


# Hitting asymptotics

@dataclass
class HittingPrediction:
    x: int
    N: int
    u_form: float        # c U(x, N) N / c^-1(N)
    ladder_le: float     # c H-(x) N h+(N) / c^-1(N), H- summed over y <= x
    ladder_lt: float     # same with y < x
    variance_le: Optional[float] = None   # sigma^2 H-(x) / (2 E chi+ N)
    variance_lt: Optional[float] = None


def hitting_asymptotic(x: int, N: int, U_value: float, h_plus: RenewalTable, h_minus: RenewalTable,
                       c_inv_N: float, c_const: float, sigma2: Optional[float] = None,
                       mean_chi_plus: Optional[float] = None) -> HittingPrediction:
    """Asymptotic forms of P_x(L(tau-, N) > 0) under both cumulative conventions for H-"""
    if x > h_minus.x_max:
        raise DomainError(f"h- table covers 0..{h_minus.x_max}, need {x}")
    H_le = float(h_minus.h[:x + 1].sum())
    H_lt = float(h_minus.h[:x].sum())
    scale = c_const * N / c_inv_N
    prediction = HittingPrediction(x=x, N=N, u_form=scale * U_value,
                                   ladder_le=scale * H_le * h_plus(N), ladder_lt=scale * H_lt * h_plus(N))
    if sigma2 is not None and mean_chi_plus:
        prediction.variance_le = sigma2 * H_le / (2.0 * mean_chi_plus * N)
        prediction.variance_lt = sigma2 * H_lt / (2.0 * mean_chi_plus * N)
    return prediction


# Field transforms

def field_marginal_laplace(u: float, lam, x0: float = 1.0):
    """E exp(-lam l(u)) = exp(-lam x0 / (1 + 2 u lam))"""
    if u <= 0:
        raise DomainError("u must be positive")
    lam = np.asarray(lam, dtype=float)
    return np.exp(-lam * x0 / (1.0 + 2.0 * u * lam))


def field_joint_laplace(u_list: Sequence[float], lam_list: Sequence[float], x0: float = 1.0) -> float:
    """E exp(-sum lam_i l(u_i)) for the squared Bessel field, folded from the highest level down"""
    if len(u_list) != len(lam_list) or not u_list:
        raise DomainError("u_list and lam_list must be nonempty and of equal length")
    pairs = sorted(zip(u_list, lam_list))
    if pairs[0][0] <= 0:
        raise DomainError("levels must be positive")
    mu = 0.0
    for i in range(len(pairs) - 1, -1, -1):
        u, lam = pairs[i]
        mu += lam
        gap = u - pairs[i - 1][0] if i > 0 else u
        mu = mu / (1.0 + 2.0 * gap * mu)
    return math.exp(-x0 * mu)


def field_second_moment(u1: float, u2: float, x0: float = 1.0, a: Callable = a_20_closed) -> float:
    """E[l(u1) l(u2)] = 2 x0 a(u1, u2) + x0^2"""
    return 2.0 * x0 * a(u1, u2) + x0 * x0


def prediction_table(predictions) -> Tuple[List[str], List[list]]:
    """Header and rows keyed by (u_list, m) from {u_list, m, prediction} records"""
    rows = [[" ".join(f"{u:g}" for u in p["u_list"]), int(p["m"]), float(p["prediction"])] for p in predictions]
    return ["u_list", "m", "prediction"], rows
