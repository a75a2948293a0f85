"""
Monte Carlo local-time fields.

Killed fields count visits of S to each level over 0 <= j < tau- (time 0 included). Reflected
fields count visits of W to positive levels over 1 <= j <= T_M, W regenerating at its zeros.

Two engines produce the same laws:

* ``walk`` steps the walk itself. Walks are advanced in lockstep while many are alive; the few
  long survivors are then finished one at a time in growing chunks. For laws whose downward jumps
  are at most one unit, an excursion above the highest level always comes back to that level, so
  it is collapsed into a single visit there (step counts then exclude the collapsed stretches).
* ``trace`` only looks at the walk on the level set, jumping with the exact first-entry kernel
  from green_exact; runs of immediate returns to the same level are drawn as one geometric count.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

import settings
from errors import ConfigurationError, DomainError, UnsupportedLawError
from green_exact import LevelTraceKernel, level_trace_kernel
from ladder_renewal import LadderKind, exact_ladder_pmf, renewal_table
from walk_models import IncrementLaw, inverse_norming, sample_increments

logger = logging.getLogger(__name__)

BATCH_THRESHOLD = 64


class Engine(Enum):
    TRACE = "trace"
    WALK = "walk"


class Reflection(Enum):
    POSITIVE_PART = "positive-part"   # W' = max(W + X, 0)
    ABSOLUTE = "absolute"             # W' = |W + X|


@dataclass
class LocalTimeFieldSample:
    start: Optional[int]
    levels: Tuple[int, ...]
    counts: np.ndarray
    excursion_length: Optional[int]
    capped: bool

    def count_at(self, level: int) -> int:
        return int(self.counts[self.levels.index(level)])


@dataclass
class FieldBatch:
    """Many independent fields over the same level set; row i is sample i"""
    levels: np.ndarray
    counts: np.ndarray
    capped: np.ndarray
    engine: Engine
    start: Optional[int] = None
    regenerations: Optional[int] = None
    lengths: Optional[np.ndarray] = None
    folded: bool = False
    seed_index: Optional[np.ndarray] = None     # per-row seed index of the replicate that drew it

    def __len__(self) -> int:
        return int(self.counts.shape[0])

    @property
    def n_capped(self) -> int:
        return int(self.capped.sum())

    @property
    def capped_fraction(self) -> float:
        return self.n_capped / max(len(self), 1)

    def column(self, level: int, include_capped: bool = False) -> np.ndarray:
        j = int(np.searchsorted(self.levels, level))
        if j >= self.levels.size or self.levels[j] != level:
            raise DomainError(f"level {level} not tracked (levels {self.levels.tolist()})")
        values = self.counts[:, j]
        return values if include_capped else values[~self.capped]

    def valid_counts(self) -> np.ndarray:
        return self.counts[~self.capped]

    def sample(self, i: int) -> LocalTimeFieldSample:
        return LocalTimeFieldSample(
            start=self.start, levels=tuple(int(l) for l in self.levels), counts=self.counts[i].copy(),
            excursion_length=None if self.lengths is None else int(self.lengths[i]),
            capped=bool(self.capped[i]))

    def samples(self) -> Iterator[LocalTimeFieldSample]:
        for i in range(len(self)):
            yield self.sample(i)

    def records(self, limit: Optional[int] = None) -> Iterator[dict]:
        """JSON-ready rows: seed index, counts keyed by level, capped flag"""
        n = len(self) if limit is None else min(limit, len(self))
        keys = [str(int(level)) for level in self.levels]
        for i in range(n):
            yield {
                "sample": i,
                "seed_index": None if self.seed_index is None else int(self.seed_index[i]),
                "counts": dict(zip(keys, (int(c) for c in self.counts[i]))),
                "capped": bool(self.capped[i]),
                "excursion_length": None if self.lengths is None else int(self.lengths[i]),
            }

    def histogram(self) -> List[list]:
        """Rows (level, count, frequency) over the uncapped samples"""
        valid = self.valid_counts()
        rows = []
        for j, level in enumerate(self.levels):
            values, frequency = np.unique(valid[:, j], return_counts=True)
            rows.extend([int(level), int(v), int(f)] for v, f in zip(values, frequency))
        return rows

    @classmethod
    def concat(cls, batches: Sequence["FieldBatch"]) -> "FieldBatch":
        """Merge replicate batches in the given order"""
        if not batches:
            raise ConfigurationError("nothing to merge")
        first = batches[0]
        for b in batches[1:]:
            if not np.array_equal(b.levels, first.levels):
                raise ConfigurationError("cannot merge batches over different level sets")
        lengths = seed_index = None
        if all(b.lengths is not None for b in batches):
            lengths = np.concatenate([b.lengths for b in batches])
        if all(b.seed_index is not None for b in batches):
            seed_index = np.concatenate([b.seed_index for b in batches])
        return cls(levels=first.levels, counts=np.concatenate([b.counts for b in batches]),
                   capped=np.concatenate([b.capped for b in batches]), engine=first.engine,
                   start=first.start, regenerations=first.regenerations, lengths=lengths,
                   folded=any(b.folded for b in batches), seed_index=seed_index)


def _levels_array(levels) -> np.ndarray:
    arr = np.array(sorted(set(int(l) for l in levels)), dtype=np.int64)
    if arr.size == 0 or arr[0] < 1:
        raise DomainError("levels must be nonempty and positive")
    return arr


def _default_engine(law: IncrementLaw, engine: Optional[Engine]) -> Engine:
    if engine is None:
        return Engine.TRACE if law.is_finite else Engine.WALK
    engine = Engine(engine)
    if engine is Engine.TRACE and not law.is_finite:
        raise UnsupportedLawError(f"trace engine needs a finite-support law, {law.name} is heavy-tailed")
    return engine


def _count_visits(counts: np.ndarray, rows: np.ndarray, positions: np.ndarray, levels: np.ndarray):
    """counts[rows[i], level index] += 1 wherever positions[i] is a level (rows unique)"""
    if rows.size == 0:
        return
    idx = np.minimum(np.searchsorted(levels, positions), levels.size - 1)
    hit = levels[idx] == positions
    counts[rows[hit], idx[hit]] += 1


def _add_counts(counts: np.ndarray, rows: np.ndarray, cols: np.ndarray, weights=None):
    """Scatter-add that tolerates repeated (row, col) pairs"""
    if rows.size == 0:
        return
    flat = rows * counts.shape[1] + cols
    counts += np.bincount(flat, weights=weights, minlength=counts.size).astype(np.int64).reshape(counts.shape)


# Walk engine, killed

def _walk_killed(law, start, levels, count, rng, cap, batch_threshold=BATCH_THRESHOLD):
    k = levels.size
    ceiling = int(levels[-1]) if law.skip_free_down else None
    counts = np.zeros((count, k), dtype=np.int64)
    lengths = np.zeros(count, dtype=np.int64)
    done = np.zeros(count, dtype=bool)
    pos = np.full(count, start, dtype=np.int64)

    if ceiling is not None and start > ceiling:
        pos[:] = ceiling
        counts[:, k - 1] += 1
    else:
        _count_visits(counts, np.arange(count), pos, levels)

    active = np.arange(count)
    step = 0
    while active.size > batch_threshold and step < cap:
        new = pos[active] + sample_increments(law, rng, active.size)
        step += 1
        lengths[active] = step
        dead = new <= 0
        if ceiling is not None:
            np.minimum(new, ceiling, out=new)
        pos[active] = new
        live = ~dead
        _count_visits(counts, active[live], new[live], levels)
        done[active[dead]] = True
        active = active[live]

    for i in active:
        lengths[i], done[i] = _finish_killed(law, rng, int(pos[i]), int(lengths[i]), counts[i],
                                             levels, ceiling, cap)
    return counts, lengths, ~done, ceiling is not None


def _finish_killed(law, rng, p, t, row, levels, ceiling, cap, chunk=256):
    k = levels.size
    while t < cap:
        m = min(chunk, cap - t)
        path = p + np.cumsum(sample_increments(law, rng, m))
        event = path <= 0
        if ceiling is not None:
            event |= path > ceiling
        stop = int(np.argmax(event)) if event.any() else m
        segment = path[:stop]
        idx = np.minimum(np.searchsorted(levels, segment), k - 1)
        hit = levels[idx] == segment
        row += np.bincount(idx[hit], minlength=k)
        if stop == m:
            p, t = int(path[-1]), t + m
            chunk = min(chunk * 2, 1 << 20)
            continue
        t += stop + 1
        if path[stop] <= 0:
            return t, True
        row[k - 1] += 1
        p = ceiling
    return t, False


# Trace engine

def _leave_cdf(kernel: LevelTraceKernel) -> Tuple[np.ndarray, np.ndarray]:
    """Per level: probability of an immediate return, and the CDF of the next move otherwise"""
    rows = kernel.level_rows.copy()
    k = kernel.n_levels
    stay = rows[np.arange(k), np.arange(k)].copy()
    rows[np.arange(k), np.arange(k)] = 0.0
    totals = rows.sum(axis=1, keepdims=True)
    rows = np.where(totals > 0, rows / np.where(totals > 0, totals, 1.0), 0.0)
    rows[totals[:, 0] == 0, k] = 1.0
    cdf = np.cumsum(rows, axis=1)
    cdf[:, -1] = 1.0
    return np.clip(stay, 0.0, 1.0), cdf


def _draw(cdf_rows: np.ndarray, rng) -> np.ndarray:
    u = rng.random(cdf_rows.shape[0])
    return np.minimum((cdf_rows <= u[:, None]).sum(axis=1), cdf_rows.shape[1] - 1)


def _trace_run(kernel: LevelTraceKernel, owners: np.ndarray, states: np.ndarray, counts: np.ndarray, rng):
    """Follow tokens sitting on levels (already counted) until they die"""
    stay, cdf = _leave_cdf(kernel)
    k = kernel.n_levels
    while owners.size:
        extra = rng.geometric(1.0 - stay[states]) - 1
        _add_counts(counts, owners, states, extra)
        nxt = _draw(cdf[states], rng)
        moved = nxt < k
        owners, states = owners[moved], nxt[moved]
        _add_counts(counts, owners, states)


def _trace_killed(kernel: LevelTraceKernel, start: int, count: int, rng) -> np.ndarray:
    k = kernel.n_levels
    counts = np.zeros((count, k), dtype=np.int64)
    owners = np.arange(count)
    hit = np.flatnonzero(kernel.levels == start)
    if hit.size:
        states = np.full(count, hit[0], dtype=np.int64)
        counts[:, hit[0]] = 1
    else:
        row = np.cumsum(kernel.row(start))
        row[-1] = 1.0
        first = _draw(np.broadcast_to(row, (count, k + 1)), rng)
        entered = first < k
        owners, states = owners[entered], first[entered]
        _add_counts(counts, owners, states)
    _trace_run(kernel, owners, states, counts, rng)
    return counts


def _trace_reflected(kernel: LevelTraceKernel, M: int, count: int, rng) -> np.ndarray:
    k = kernel.n_levels
    counts = np.zeros((count, k), dtype=np.int64)
    row = kernel.row(0)
    entries = rng.multinomial(M, row / row.sum(), size=count)[:, :k]
    counts += entries
    owners = np.repeat(np.tile(np.arange(count), k), entries.T.reshape(-1))
    states = np.repeat(np.repeat(np.arange(k), count), entries.T.reshape(-1))
    _trace_run(kernel, owners, states, counts, rng)
    return counts


# Public API

def simulate_killed_batch(law: IncrementLaw, start: int, levels: Sequence[int], count: int,
                          rng: np.random.Generator, cap: int = settings.DEFAULT_STEP_CAP,
                          engine: Optional[Engine] = None,
                          kernel: Optional[LevelTraceKernel] = None) -> FieldBatch:
    """``count`` independent killed fields L(tau-, .) from ``start``"""
    if start < 0:
        raise DomainError("start must be >= 0")
    if cap < 1:
        raise ConfigurationError("cap must be >= 1")
    levels = _levels_array(levels)
    engine = _default_engine(law, engine)
    if engine is Engine.TRACE:
        kernel = kernel or level_trace_kernel(law, levels, starts=[start])
        counts = _trace_killed(kernel, start, count, rng)
        return FieldBatch(levels=levels, counts=counts, capped=np.zeros(count, dtype=bool),
                          engine=engine, start=start)
    counts, lengths, capped, folded = _walk_killed(law, start, levels, count, rng, cap)
    if capped.any():
        logger.info(f"⏱️ {int(capped.sum())}/{count} killed excursions from {start} hit the cap {cap}")
    return FieldBatch(levels=levels, counts=counts, capped=capped, engine=engine, start=start,
                      lengths=lengths, folded=folded)


def simulate_killed(law: IncrementLaw, start: int, levels: Sequence[int], cap: int,
                    rng: np.random.Generator) -> LocalTimeFieldSample:
    """One killed field, stepping the walk"""
    return simulate_killed_batch(law, start, levels, 1, rng, cap, Engine.WALK).sample(0)


def _walk_reflected(law, M, levels, count, rng, cap, reflection, batch_threshold=BATCH_THRESHOLD):
    k = levels.size
    ceiling = int(levels[-1]) if law.skip_free_down else None
    counts = np.zeros((count, k), dtype=np.int64)
    lengths = np.zeros(count, dtype=np.int64)
    regen = np.zeros(count, dtype=np.int64)
    pos = np.zeros(count, dtype=np.int64)
    active = np.arange(count)
    step = 0
    # lockstep until few remain; laws without the ceiling collapse finish one by one
    threshold = 0 if ceiling is not None else batch_threshold
    while active.size > threshold and step < cap:
        new = pos[active] + sample_increments(law, rng, active.size)
        new = np.abs(new) if reflection is Reflection.ABSOLUTE else np.maximum(new, 0)
        if ceiling is not None:
            np.minimum(new, ceiling, out=new)
        step += 1
        lengths[active] = step
        pos[active] = new
        _count_visits(counts, active, new, levels)
        regen[active[new == 0]] += 1
        active = active[regen[active] < M]

    for i in active:
        lengths[i], regen[i] = _finish_reflected(law, rng, int(pos[i]), int(lengths[i]), int(regen[i]),
                                                 M, counts[i], levels, cap)
    return counts, lengths, regen < M, ceiling is not None


def _finish_reflected(law, rng, p, t, regen, M, row, levels, cap, chunk=256):
    """Positive-part reflection via the Lindley form W_n = T_n - min(0, min_{k<=n} T_k)"""
    k = levels.size
    while t < cap:
        m = min(chunk, cap - t)
        T = p + np.cumsum(sample_increments(law, rng, m))
        W = T - np.minimum.accumulate(np.minimum(T, 0))
        zeros = np.flatnonzero(W == 0)
        need = M - regen
        stop = int(zeros[need - 1]) + 1 if zeros.size >= need else m
        segment = W[:stop]
        idx = np.minimum(np.searchsorted(levels, segment), k - 1)
        hit = levels[idx] == segment
        row += np.bincount(idx[hit], minlength=k)
        if zeros.size >= need:
            return t + stop, M
        regen += zeros.size
        p, t = int(W[-1]), t + m
        chunk = min(chunk * 2, 1 << 20)
    return t, regen


def simulate_reflected_direct_batch(law: IncrementLaw, M: int, levels: Sequence[int], count: int,
                                    rng: np.random.Generator, cap: int = settings.DEFAULT_STEP_CAP,
                                    reflection: Reflection = Reflection.POSITIVE_PART) -> FieldBatch:
    """Fields L_W(T_M, .) of the reflected walk started at 0, stepped directly"""
    if M < 1:
        raise ConfigurationError("M must be >= 1")
    reflection = Reflection(reflection)
    if reflection is Reflection.ABSOLUTE and not law.skip_free_down:
        raise UnsupportedLawError("absolute reflection is only provided for laws with downward jumps >= -1")
    levels = _levels_array(levels)
    counts, lengths, capped, folded = _walk_reflected(law, M, levels, count, rng, cap, reflection)
    if capped.any():
        logger.info(f"⏱️ {int(capped.sum())}/{count} reflected walks hit the cap {cap}")
    return FieldBatch(levels=levels, counts=counts, capped=capped, engine=Engine.WALK,
                      regenerations=M, lengths=lengths, folded=folded)


def simulate_reflected_direct(law: IncrementLaw, M: int, levels: Sequence[int], cap: int,
                              rng: np.random.Generator,
                              reflection: Reflection = Reflection.POSITIVE_PART) -> LocalTimeFieldSample:
    return simulate_reflected_direct_batch(law, M, levels, 1, rng, cap, reflection).sample(0)


def simulate_reflected_iid_batch(law: IncrementLaw, M: int, levels: Sequence[int], count: int,
                                 rng: np.random.Generator, cap: int = settings.DEFAULT_STEP_CAP,
                                 engine: Optional[Engine] = None,
                                 kernel: Optional[LevelTraceKernel] = None) -> FieldBatch:
    """Fields built as sums of M independent killed-from-0 fields"""
    if M < 1:
        raise ConfigurationError("M must be >= 1")
    levels = _levels_array(levels)
    engine = _default_engine(law, engine)
    if engine is Engine.TRACE:
        kernel = kernel or level_trace_kernel(law, levels, starts=[0])
        counts = _trace_reflected(kernel, M, count, rng)
        return FieldBatch(levels=levels, counts=counts, capped=np.zeros(count, dtype=bool),
                          engine=engine, regenerations=M)
    k = levels.size
    counts, lengths, capped, folded = _walk_killed(law, 0, levels, count * M, rng, cap)
    return FieldBatch(levels=levels, counts=counts.reshape(count, M, k).sum(axis=1),
                      capped=capped.reshape(count, M).any(axis=1), engine=engine, regenerations=M,
                      lengths=lengths.reshape(count, M).sum(axis=1), folded=folded)


def simulate_reflected_iid(law: IncrementLaw, M: int, levels: Sequence[int], rng: np.random.Generator,
                           cap: int = settings.DEFAULT_STEP_CAP) -> LocalTimeFieldSample:
    return simulate_reflected_iid_batch(law, M, levels, 1, rng, cap, Engine.WALK).sample(0)


# Rescaled field

@dataclass(frozen=True)
class MRule:
    """Number of regenerations: ``renewal`` uses round(c^-1(N) / (N h+(N))), ``fixed`` a given M"""
    kind: str = "renewal"
    value: Optional[int] = None

    @classmethod
    def parse(cls, text: str) -> "MRule":
        text = str(text).strip().lower()
        if text in ("renewal", "auto"):
            return cls("renewal")
        if text.startswith("fixed:"):
            text = text.split(":", 1)[1]
        try:
            return cls("fixed", int(text))
        except ValueError:
            raise ConfigurationError(f"Unknown M rule {text!r}; use 'renewal' or 'fixed:<M>'")

    def resolve(self, law: IncrementLaw, N: int) -> int:
        if self.kind == "fixed":
            if not self.value or self.value < 1:
                raise ConfigurationError("fixed M rule needs M >= 1")
            return int(self.value)
        if not law.is_finite:
            raise ConfigurationError(f"the renewal-based M rule needs h+ exactly; use a fixed M for {law.name}")
        h_plus = renewal_table(exact_ladder_pmf(law, LadderKind.STRICT_ASCENDING), N)
        return max(1, int(round(float(inverse_norming(law, N)) / (N * h_plus(N)))))


@dataclass
class RescaledField:
    N: int
    u_list: Tuple[float, ...]
    M: int
    values: np.ndarray          # rows: samples, columns: u_list
    capped: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    def column(self, u: float) -> np.ndarray:
        keep = ~self.capped if self.capped.size else slice(None)
        return self.values[keep, self.u_list.index(u)]


def field_levels(N: int, u_list: Sequence[float]) -> List[int]:
    levels = [int(np.floor(u * N)) for u in u_list]
    if min(levels) < 1:
        raise DomainError(f"floor(uN) must be >= 1 for every u, got {levels}")
    return levels


def rescaled_field(law: IncrementLaw, N: int, u_list: Sequence[float], M_rule: MRule,
                   rng: np.random.Generator, count: int = 1, engine: Optional[Engine] = None,
                   kernel: Optional[LevelTraceKernel] = None, cap: int = settings.DEFAULT_STEP_CAP,
                   M: Optional[int] = None) -> RescaledField:
    """Samples of l(u) = (N / c^-1(N)) L_W(T_M, floor(uN)) for u in ``u_list``"""
    u_list = tuple(float(u) for u in u_list)
    levels = field_levels(N, u_list)
    M = M or M_rule.resolve(law, N)
    batch = simulate_reflected_iid_batch(law, M, levels, count, rng, cap, engine, kernel)
    scale = N / float(inverse_norming(law, N))
    columns = [np.searchsorted(batch.levels, l) for l in levels]
    return RescaledField(N=N, u_list=u_list, M=M, values=scale * batch.counts[:, columns].astype(float),
                         capped=batch.capped)
