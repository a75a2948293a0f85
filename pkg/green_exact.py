"""
Exact Green function and hitting probabilities of the walk killed at tau- = min{n >= 1: S_n <= 0}.

The walk lives on the strip {1..y_max}. Jumps above y_max are folded back with the exact law of
the first re-entry point (the undershoot below y_max at the first weak descending passage), so
for finite-support laws every quantity below is exact for any strip containing the points
involved. Without folding the mass leaving the strip is tracked as overflow.
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

import settings
from errors import DomainError, TruncationError, UnsupportedLawError
from ladder_renewal import LadderKind, exact_ladder_pmf, renewal_table
from walk_models import IncrementLaw, inverse_norming

logger = logging.getLogger(__name__)


def reentry_law(law: IncrementLaw) -> Dict[int, np.ndarray]:
    """
    For j = 1..max_jump: law of k >= 0 where y_max - k is the first position <= y_max of a walk
    started at y_max + j. P(k) = sum_{s<j} u-(s) P(chi- = j - s + k).
    """
    chi = exact_ladder_pmf(law, LadderKind.WEAK_DESCENDING)
    u = law.max_jump
    u_minus = renewal_table(chi, max(u - 1, 0)).h
    out = {}
    for j in range(1, u + 1):
        probs = np.zeros(chi.max_height)
        for k in range(chi.max_height):
            probs[k] = sum(u_minus[s] * chi.prob(j - s + k) for s in range(j))
        out[j] = probs
    return out


@dataclass
class GreenValue:
    x: int
    y: int
    green: float
    error_bound: float
    strip_size: int
    include_time_zero: bool = False

    def as_row(self) -> dict:
        return {"x": self.x, "y": self.y, "green": self.green, "error_bound": self.error_bound,
                "strip_size": self.strip_size}


class StripDP:
    """Substochastic transition of the killed walk on {1..y_max} with absorption at <= 0"""

    def __init__(self, law: IncrementLaw, y_max: int, mass_tolerance: float = 1e-12, fold: bool = True):
        if not law.is_finite:
            raise UnsupportedLawError(
                f"{law.name} has unbounded support; exact Green functions need a finite-support law")
        if y_max < 1:
            raise DomainError("y_max must be >= 1")
        self.law = law
        self.y_max = int(y_max)
        self.mass_tolerance = mass_tolerance
        self.fold = fold
        self._reentry = reentry_law(law) if fold else {}
        self.Q, self.death, self.overflow = self._build()
        self.reset()

    # Transitions

    def step_distribution(self, z: int) -> Tuple[Dict[int, float], float, float]:
        """One step from z >= 0: ({strip state: prob}, death prob, overflow prob)"""
        dest, death, over = {}, 0.0, 0.0
        for v, p in zip(self.law.values.tolist(), self.law.probs.tolist()):
            t = z + v
            if t <= 0:
                death += p
            elif t <= self.y_max:
                dest[t] = dest.get(t, 0.0) + p
            elif self.fold:
                for k, r in enumerate(self._reentry[t - self.y_max]):
                    if r == 0.0:
                        continue
                    back = self.y_max - k
                    if back >= 1:
                        dest[back] = dest.get(back, 0.0) + p * r
                    else:
                        death += p * r
            else:
                over += p
        return dest, death, over

    def _build(self):
        rows, cols, data = [], [], []
        death = np.zeros(self.y_max)
        overflow = np.zeros(self.y_max)
        for i in range(1, self.y_max + 1):
            dest, d, o = self.step_distribution(i)
            for t, p in dest.items():
                rows.append(i - 1)
                cols.append(t - 1)
                data.append(p)
            death[i - 1], overflow[i - 1] = d, o
        Q = sparse.csr_matrix((data, (rows, cols)), shape=(self.y_max, self.y_max))
        return Q, death, overflow

    def entry_vector(self, z: int) -> Tuple[np.ndarray, float]:
        """Dense one-step distribution from z over the strip, and the one-step death probability"""
        dest, d, _ = self.step_distribution(z)
        vec = np.zeros(self.y_max)
        for t, p in dest.items():
            vec[t - 1] = p
        return vec, d

    # Time stepping

    def reset(self, start: Optional[int] = None):
        self.state = np.zeros(self.y_max)
        self.absorbed = 0.0
        self.overflowed = 0.0
        self.steps = 0
        if start is not None:
            self._check_point(start)
            self.state[start - 1] = 1.0

    def step(self):
        self.absorbed += float(self.death @ self.state)
        self.overflowed += float(self.overflow @ self.state)
        self.state = self.Q.T @ self.state
        self.steps += 1
        return self.state

    @property
    def surviving(self) -> float:
        return float(self.state.sum())

    @property
    def mass_error(self) -> float:
        return abs(1.0 - self.surviving - self.absorbed - self.overflowed)

    def green_by_stepping(self, x: int, y: int, max_steps: int = 10**6) -> GreenValue:
        """sum_{n>=1} P_x(S_n = y, tau- > n) by iterating the transition until the survivor mass is negligible"""
        self._check_point(y)
        self.reset(x)
        total = 0.0
        while self.surviving > self.mass_tolerance and self.steps < max_steps:
            total += float(self.step()[y - 1])
            if self.mass_error > self.mass_tolerance:
                raise TruncationError(f"mass conservation broken at step {self.steps}", achieved=self.mass_error)
        if self.surviving > self.mass_tolerance:
            raise TruncationError(f"survivor mass {self.surviving:.3e} after {self.steps} steps",
                                  achieved=self.surviving)
        # each unit of leftover mass visits y at most G0(y, y) more times on average
        bound = (self.surviving + self.overflowed) * float(self.potential_column(y)[y - 1])
        return GreenValue(x, y, total, bound, self.y_max)

    # Linear solves

    def _check_point(self, z: int):
        if not 1 <= z <= self.y_max:
            raise DomainError(f"point {z} outside strip 1..{self.y_max}")

    @cached_property
    def _lu(self):
        A = sparse.identity(self.y_max, format="csc") - self.Q.tocsc()
        return splu(A.tocsc())

    def potential_column(self, y: int) -> np.ndarray:
        """G0(., y) = sum_{n>=0} P_.(S_n = y, tau- > n) on the strip"""
        self._check_point(y)
        rhs = np.zeros(self.y_max)
        rhs[y - 1] = 1.0
        return self._lu.solve(rhs)

    @cached_property
    def absorption_error(self) -> float:
        """max over starts of |1 - P(absorbed) - P(overflow)|"""
        leave = self._lu.solve(self.death + self.overflow)
        return float(np.max(np.abs(1.0 - leave)))

    def overflow_probability(self, z: int) -> float:
        """P_z(leave the strip upward before tau-); zero when folding"""
        if self.fold or not self.overflow.any():
            return 0.0
        entry, _ = self.entry_vector(z)
        _, _, direct = self.step_distribution(z)
        return direct + float(entry @ self._lu.solve(self.overflow))

    def transient_solver(self, removed: Sequence[int]):
        """LU of I - Q restricted to the strip without the ``removed`` points"""
        keep = np.setdiff1d(np.arange(self.y_max), np.asarray(removed, dtype=int) - 1)
        Qc = self.Q.tocsc()
        A = sparse.identity(keep.size, format="csc") - Qc[keep][:, keep]
        return keep, splu(A.tocsc())


def default_strip(*points: int) -> int:
    return settings.STRIP_FACTOR * max(max(points), 1)


def green_sum(law: IncrementLaw, x: int, y: int, tolerance: float = 1e-8, y_max: Optional[int] = None,
              include_time_zero: bool = False, fold: bool = True, strip: Optional[StripDP] = None) -> GreenValue:
    """
    G(x, y) = sum_{n>=1} P_x(S_n = y, tau- > n); ``include_time_zero`` adds the n = 0 term.

    x = 0 is allowed (the walk then dies at any first step <= 0).
    """
    if x < 0 or y < 1:
        raise DomainError(f"green_sum needs x >= 0 and y >= 1, got x={x}, y={y}")
    strip = strip or StripDP(law, y_max or default_strip(x, y), fold=fold)
    if max(x, y) > strip.y_max:
        raise DomainError(f"points ({x}, {y}) outside strip 1..{strip.y_max}")

    column = strip.potential_column(y)
    entry, _ = strip.entry_vector(x)
    value = float(entry @ column)
    if include_time_zero and x == y:
        value += 1.0

    error = strip.absorption_error
    if not strip.fold:
        error += strip.overflow_probability(x) * float(column[y - 1])
    if error > tolerance:
        raise TruncationError(
            f"green_sum({x}, {y}) on strip {strip.y_max}: error bound {error:.3e} > {tolerance:g}", achieved=error)
    return GreenValue(x, y, value, error, strip.y_max, include_time_zero)


def scaled_green(law: IncrementLaw, u: float, v: float, N: int, tolerance: float = 1e-8) -> float:
    """(N / c^-1(N)) G(floor(uN), floor(vN))"""
    x, y = int(np.floor(u * N)), int(np.floor(v * N))
    if x < 1 or y < 1:
        raise DomainError(f"floor(uN) and floor(vN) must be >= 1, got {x}, {y}")
    return N / float(inverse_norming(law, N)) * green_sum(law, x, y, tolerance).green


def hitting_prob(law: IncrementLaw, x: int, level: int, y_max: Optional[int] = None,
                 tolerance: float = 1e-8) -> float:
    """P_x(S_n = level for some 0 <= n < tau-); 1 when x = level"""
    if x < 0 or level < 1:
        raise DomainError(f"hitting_prob needs x >= 0 and level >= 1, got x={x}, level={level}")
    if x == level:
        return 1.0
    strip = StripDP(law, y_max or default_strip(x, level))
    return _first_entry(strip, [level], [x], tolerance)[0, 0]


def escape_probability(law: IncrementLaw, level: int, y_max: Optional[int] = None,
                       tolerance: float = 1e-8) -> float:
    """p_N = P_N(tau- comes before the first return to N)"""
    strip = StripDP(law, y_max or default_strip(level))
    return 1.0 - _first_entry(strip, [level], [level], tolerance)[0, 0]


def _first_entry(strip: StripDP, targets: Sequence[int], sources: Iterable[int], tolerance: float) -> np.ndarray:
    """
    Rows: sources. Columns: targets then death. Entry (z, j): probability that after time 0 the
    walk from z enters the target set first at targets[j] (last column: dies first).
    """
    targets = [int(t) for t in targets]
    for t in targets:
        strip._check_point(t)
    keep, lu = strip.transient_solver(targets)
    idx = np.asarray(targets) - 1
    rhs = np.column_stack([strip.Q[keep][:, idx].toarray(), strip.death[keep]])
    solved = lu.solve(rhs)

    rows = []
    for z in sources:
        if z > strip.y_max:
            raise DomainError(f"source {z} outside strip 1..{strip.y_max}")
        entry, d = strip.entry_vector(z)
        direct = np.append(entry[idx], d)
        rows.append(direct + entry[keep] @ solved)
    out = np.array(rows)
    error = float(np.max(np.abs(1.0 - out.sum(axis=1)))) if out.size else 0.0
    if error > tolerance:
        raise TruncationError(f"first-entry mass defect {error:.3e} > {tolerance:g}", achieved=error)
    return out


@dataclass
class LevelTraceKernel:
    """Exact law of the next visit to the level set (or death) from each level and start"""
    levels: np.ndarray
    sources: Dict[int, int]
    matrix: np.ndarray          # rows: sources, columns: levels then death
    mass_error: float

    @property
    def n_levels(self) -> int:
        return int(self.levels.size)

    def row(self, z: int) -> np.ndarray:
        return self.matrix[self.sources[z]]

    @property
    def level_rows(self) -> np.ndarray:
        return self.matrix[[self.sources[int(l)] for l in self.levels]]


def level_trace_kernel(law: IncrementLaw, levels: Sequence[int], starts: Sequence[int] = (),
                       y_max: Optional[int] = None, tolerance: float = 1e-9) -> LevelTraceKernel:
    """Kernel of the walk observed only at its visits to ``levels`` before tau-"""
    levels = np.array(sorted(set(int(l) for l in levels)), dtype=np.int64)
    if levels.size == 0 or levels[0] < 1:
        raise DomainError("levels must be nonempty and positive")
    sources = list(levels.tolist()) + [int(s) for s in starts if int(s) not in set(levels.tolist())]
    strip = StripDP(law, y_max or default_strip(*sources))
    matrix = _first_entry(strip, levels.tolist(), sources, tolerance)
    mass_error = float(np.max(np.abs(1.0 - matrix.sum(axis=1))))
    logger.debug(f"level trace kernel: {levels.size} levels, {len(sources)} sources, strip {strip.y_max}")
    return LevelTraceKernel(levels=levels, sources={z: i for i, z in enumerate(sources)},
                            matrix=matrix, mass_error=mass_error)


def exact_second_moment(law: IncrementLaw, x: int, y1: int, y2: int, tolerance: float = 1e-8) -> float:
    """E_x[L(tau-, y1) L(tau-, y2)] with L counting time 0"""
    strip = StripDP(law, default_strip(x, y1, y2))

    def g0(a, b):
        return green_sum(law, a, b, tolerance, include_time_zero=True, strip=strip).green

    def g1(a, b):
        return green_sum(law, a, b, tolerance, strip=strip).green

    if y1 == y2:
        return g0(x, y1) * (1.0 + 2.0 * g1(y1, y1))
    return g0(x, y1) * g1(y1, y2) + g0(x, y2) * g1(y2, y1)


def ordered_visit_moment(law: IncrementLaw, x: int, chain: Sequence[int], tolerance: float = 1e-8) -> float:
    """E_x #{j_1 < ... < j_m < tau-: S_{j_i} = chain[i]} = G0(x, y1) prod G(y_i, y_{i+1})"""
    if not chain:
        raise DomainError("chain must be nonempty")
    strip = StripDP(law, default_strip(x, *chain))
    value = green_sum(law, x, chain[0], tolerance, include_time_zero=True, strip=strip).green
    for a, b in zip(chain[:-1], chain[1:]):
        value *= green_sum(law, a, b, tolerance, strip=strip).green
    return value


GREEN_HEADER = ["x", "y", "green", "error_bound", "strip_size"]


def green_table(values: Iterable[GreenValue]) -> Tuple[List[str], List[list]]:
    """Header and rows for a CSV export of Green values"""
    return list(GREEN_HEADER), [[value.as_row()[key] for key in GREEN_HEADER] for value in values]
