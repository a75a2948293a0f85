"""
Knight's up-crossing chain for the simple walk.

Q_n counts the up-crossings n -> n+1 of the reflected simple walk before it has made its
prescribed number of returns to 0. Q is a critical Galton-Watson process with offspring law
P(k) = 2^-(k+1), so p(i, j) = C(i+j-1, j) 2^-(i+j), and L_W(n) = Q_n + Q_{n-1} for n >= 1.
"""

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import special, stats

from errors import DomainError, TruncationError, UnsupportedLawError
from local_time_sim import Reflection, simulate_reflected_direct_batch
from stats_verify import TestReport, chi_square_gof, mean_check, two_sample_chi2
from walk_models import IncrementLaw, get_law

logger = logging.getLogger(__name__)

DEFAULT_SUPPORT_CAP = 1024
EXPLOSION_BOUND = 10**7
_LN2 = np.log(2.0)


def kernel_p(i: int, j: int) -> float:
    """C(i+j-1, j) 2^-(i+j) evaluated in log space; p(0, 0) = 1"""
    if i < 0 or j < 0:
        raise DomainError("kernel_p needs i, j >= 0")
    if i == 0:
        return 1.0 if j == 0 else 0.0
    log_p = special.gammaln(i + j) - special.gammaln(j + 1) - special.gammaln(i) - (i + j) * _LN2
    return float(np.exp(log_p))


def kernel_p_signed(i: int, j: int) -> float:
    """(-1)^j binom(-i, j) 2^-(i+j), the alternating form"""
    if i < 0 or j < 0:
        raise DomainError("kernel_p_signed needs i, j >= 0")
    # generalized binomial as a falling product; scipy's binom is undefined at negative integers
    k = np.arange(j, dtype=float)
    binom_neg = float(np.prod((-i - k) / (k + 1.0)))
    return (-1) ** j * binom_neg * 2.0 ** (-(i + j))


@lru_cache(maxsize=8)
def kernel_matrix(size: int) -> np.ndarray:
    """p(i, j) for 0 <= i, j < size"""
    i = np.arange(size, dtype=float)[:, None]
    j = np.arange(size, dtype=float)[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        log_p = special.gammaln(i + j) - special.gammaln(j + 1) - special.gammaln(i) - (i + j) * _LN2
        P = np.exp(log_p)
    P[0, :] = 0.0
    P[0, 0] = 1.0
    P.setflags(write=False)
    return P


def row_tail(i: int, j_max: int) -> float:
    """P(Q_1 > j_max | Q_0 = i)"""
    if i == 0:
        return 0.0
    return float(stats.nbinom.sf(j_max, i, 0.5))


def offspring_convolution(i: int, j_max: int) -> np.ndarray:
    """i-fold convolution of the offspring law 2^-(k+1), truncated to 0..j_max"""
    offspring = 0.5 ** (np.arange(j_max + 1) + 1)
    out = np.zeros(j_max + 1)
    out[0] = 1.0
    for _ in range(i):
        out = np.convolve(out, offspring)[:j_max + 1]
    return out


# Simulation

@dataclass
class QTrajectory:
    values: np.ndarray
    truncated: bool


def simulate_Q(m: int, n_max: int, rng: np.random.Generator,
               explosion_bound: int = EXPLOSION_BOUND) -> QTrajectory:
    """Galton-Watson realization: each of the i individuals has an independent geometric number of children"""
    if m < 0 or n_max < 0:
        raise DomainError("simulate_Q needs m, n_max >= 0")
    values = np.zeros(n_max + 1, dtype=np.int64)
    values[0] = m
    for n in range(1, n_max + 1):
        i = int(values[n - 1])
        if i == 0:
            break
        if i > explosion_bound:
            logger.warning(f"⚠️ Q exceeded {explosion_bound} at generation {n - 1}; trajectory truncated")
            return QTrajectory(values[:n], truncated=True)
        values[n] = int((rng.geometric(0.5, size=i) - 1).sum())
    return QTrajectory(values, truncated=False)


def knight_rescaled(N: int, u_list: Sequence[float], count: int, rng: np.random.Generator) -> np.ndarray:
    """
    Rows of q(u) = Q_{floor(uN)} / N with Q_0 = N. A generation of i individuals is drawn at once as a
    negative binomial(i, 1/2) count.
    """
    gens = [int(np.floor(u * N)) for u in u_list]
    if min(gens) < 0:
        raise DomainError("u must be nonnegative")
    Z = np.full(count, N, dtype=np.int64)
    out = np.zeros((count, len(gens)))
    wanted = {g: [k for k, h in enumerate(gens) if h == g] for g in set(gens)}
    for n in range(max(gens) + 1):
        for k in wanted.get(n, ()):
            out[:, k] = Z / N
        alive = Z > 0
        if not alive.any():
            break
        Z[alive] = rng.negative_binomial(Z[alive], 0.5)
    return out


# Exact laws

def _initial_law(m: int, reflection: Reflection, size: int) -> np.ndarray:
    init = np.zeros(size)
    if reflection is Reflection.ABSOLUTE:
        if m >= size:
            raise TruncationError(f"support cap {size} below initial state {m}")
        init[m] = 1.0
    else:
        # every zero of the positive-part walk is followed by an up-step with probability 1/2
        k = np.arange(min(m + 2, size))
        init[:k.size] = stats.binom.pmf(k, m + 1, 0.5)
    return init


def exact_Q_pmf(m: int, n: int, support_cap: int = DEFAULT_SUPPORT_CAP, initial: Optional[np.ndarray] = None,
                tolerance: float = 1e-10) -> np.ndarray:
    """Law of Q_n given Q_0 = m (or the ``initial`` law), by repeated truncated kernel steps"""
    if n < 0:
        raise DomainError("n must be >= 0")
    if initial is None:
        if not 0 <= m < support_cap:
            raise TruncationError(f"support cap {support_cap} below initial state {m}")
        pmf = np.zeros(support_cap)
        pmf[m] = 1.0
    else:
        pmf = np.asarray(initial, dtype=float)[:support_cap].copy()
    P = kernel_matrix(support_cap)
    for _ in range(n):
        pmf = pmf @ P
    dropped = 1.0 - pmf.sum()
    if dropped > tolerance:
        raise TruncationError(f"exact_Q_pmf(m={m}, n={n}): dropped mass {dropped:.3e} at cap {support_cap}",
                              achieved=dropped)
    return pmf


def local_time_pmf(m: int, n: int, reflection: Reflection = Reflection.ABSOLUTE,
                   support_cap: int = DEFAULT_SUPPORT_CAP, tolerance: float = 1e-10) -> np.ndarray:
    """Law of Q_n + Q_{n-1}: exact law of Q_{n-1}, then one kernel step from each state"""
    if n < 1:
        raise DomainError("the local-time identity is stated for n >= 1")
    init = _initial_law(m, Reflection(reflection), support_cap)
    prev = exact_Q_pmf(m, n - 1, support_cap, initial=init, tolerance=tolerance)
    P = kernel_matrix(support_cap)
    out = np.zeros(2 * support_cap)
    for i in np.flatnonzero(prev > 0):
        out[i:i + support_cap] += prev[i] * P[i]
    dropped = 1.0 - out.sum()
    if dropped > tolerance:
        raise TruncationError(f"local_time_pmf(m={m}, n={n}): dropped mass {dropped:.3e}", achieved=dropped)
    return out[:np.flatnonzero(out)[-1] + 1]


def expected_local_time(m: int, reflection: Reflection = Reflection.ABSOLUTE) -> float:
    """E[Q_n + Q_{n-1}] = 2 E Q_0 by the martingale property"""
    return 2.0 * m if Reflection(reflection) is Reflection.ABSOLUTE else float(m + 1)


def regenerations_for(m: int, reflection: Reflection) -> int:
    """
    Returns to 0 simulated for index m: m under absolute reflection, m + 1 under positive part.

    Under absolute reflection the walk is stopped at its m-th return, so M = m and the chain starts at
    Q_0 = m. Counting the start at 0 as a visit, this is the walk stopped at the time usually written
    T_{m+1}; the run labelled m here is that re-indexed run, not the one stopped at T_m.
    """
    return m if Reflection(reflection) is Reflection.ABSOLUTE else m + 1


def require_simple(law: IncrementLaw) -> IncrementLaw:
    """The up-crossing chain describes the simple walk only"""
    if not (law.is_finite and law.values.tolist() == [-1, 1] and law.pmf(-1) == law.pmf(1)):
        raise UnsupportedLawError(f"the up-crossing identity holds for the simple walk only, got {law.name}")
    return law


def identity_check(m: int, n: int, samples: int, rng: np.random.Generator,
                   reflection: Reflection = Reflection.ABSOLUTE, law: Optional[IncrementLaw] = None,
                   seed: Optional[int] = None) -> List[TestReport]:
    """Simulated L_W(n) for the reflected simple walk against the exact law of Q_n + Q_{n-1}"""
    law = require_simple(law or get_law("simple"))
    if n < 1 or m < 1:
        raise DomainError("identity_check needs m >= 1 and n >= 1")
    reflection = Reflection(reflection)
    M = regenerations_for(m, reflection)
    batch = simulate_reflected_direct_batch(law, M, [n], samples, rng, reflection=reflection)
    return identity_reports(m, n, batch.column(n), rng, reflection, seed)


def identity_reports(m: int, n: int, observed: np.ndarray, rng: np.random.Generator,
                     reflection: Reflection = Reflection.ABSOLUTE, seed: Optional[int] = None) -> List[TestReport]:
    """Goodness of fit, exact-draw two-sample test and mean check for simulated L_W(n)"""
    reflection = Reflection(reflection)
    pmf = local_time_pmf(m, n, reflection)
    reference = rng.choice(pmf.size, size=observed.size, p=pmf / pmf.sum())
    tag = f"m={m} n={n} {reflection.value}"
    return [
        chi_square_gof(observed, pmf, name=f"knight identity law ({tag})", seed=seed),
        two_sample_chi2(observed, reference, name=f"knight identity two-sample ({tag})", seed=seed),
        mean_check(observed, expected_local_time(m, reflection), name=f"knight identity mean ({tag})", seed=seed),
    ]


def pmf_table(pmf: np.ndarray) -> Tuple[List[str], List[list]]:
    return ["state", "probability"], [[state, float(prob)] for state, prob in enumerate(pmf)]
