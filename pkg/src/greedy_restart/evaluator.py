"""Performance of a restart schedule on individual problems.

Analytic model: entry ``i`` is one run that consumes exactly ``t_i``
evaluations and succeeds independently with probability ``p_i``. With
``s_i`` the probability that the first ``i`` runs all fail, the expected
total time until the first success of a schedule that is looped forever is

    E = sum_i t_i s_{i-1} / sum_i p_i s_{i-1}

(the denominator is the success probability of one full pass). Budgets
only count runs that complete inside them; a run cut off by the budget
neither succeeds nor is partially credited.

The Monte-Carlo simulator replaces the model by bootstrapping raw run
records, so run-length variability is kept.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, ModelError
from .perfdata import DEFAULT_PENALTY_FACTOR, PerfTable, ProblemKey, RunRecord
from .scheduler import Schedule

LOOP = "loop_schedule"
STOP = "stop"
DEFAULT_BUDGET_FACTOR = 1e6

# survival products switch to log space beyond these limits
_LOG_SPACE_P = 0.999
_LOG_SPACE_LEN = 10_000


@dataclass(frozen=True)
class ExecutionPolicy:
    budget: float = math.inf
    after_exhaustion: str = LOOP

    def __post_init__(self):
        if not self.budget > 0:
            raise ValueError("budget must be positive")
        if self.after_exhaustion not in (LOOP, STOP):
            raise ValueError(f"after_exhaustion must be {LOOP!r} or {STOP!r}")

    @classmethod
    def for_dim(cls, dim: int, factor: float = DEFAULT_BUDGET_FACTOR,
                after_exhaustion: str = LOOP) -> "ExecutionPolicy":
        return cls(factor * dim, after_exhaustion)

    @property
    def loops(self) -> bool:
        return self.after_exhaustion == LOOP


@dataclass(frozen=True)
class ProblemEval:
    problem: ProblemKey
    success_prob: float
    expected_time: float
    schedule_ert: float
    method: str = "analytic"


@dataclass(frozen=True)
class SolveCurve:
    evaluations: np.ndarray
    success: np.ndarray

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.evaluations.tolist(), self.success.tolist()))

    def __len__(self) -> int:
        return len(self.evaluations)

    def at(self, budget):
        """Success probability of the last point at or below ``budget`` (vectorized)."""
        idx = np.searchsorted(self.evaluations, budget, side="right")
        vals = np.concatenate(([0.0], self.success))
        return vals[idx]


def _as_arrays(entries: Iterable[tuple[float, float]]) -> tuple[np.ndarray, np.ndarray]:
    arr = np.asarray(list(entries), dtype=float).reshape(-1, 2)
    if len(arr) == 0:
        raise ValueError("at least one entry required")
    t, p = arr[:, 0].copy(), arr[:, 1].copy()
    if np.any(~(t > 0)) or np.any(~np.isfinite(t)):
        raise ValueError("run times must be positive and finite")
    if np.any((p < 0) | (p > 1)) or np.any(np.isnan(p)):
        raise ValueError("success probabilities must lie in [0, 1]")
    return t, p


def _survivals(p: np.ndarray) -> np.ndarray:
    """``s[i]`` = probability that the first ``i`` runs all fail; ``s[0] = 1``."""
    if len(p) > _LOG_SPACE_LEN or np.any(p > _LOG_SPACE_P):
        with np.errstate(divide="ignore"):
            logs = np.concatenate(([0.0], np.cumsum(np.log1p(-p))))
        return np.exp(logs)
    return np.concatenate(([1.0], np.cumprod(1.0 - p)))


def _fit(t: np.ndarray, budget: float, loops: bool) -> tuple[int, int]:
    """Number of full passes and of further prefix runs completing within ``budget``."""
    cum = np.cumsum(t)
    cycle = cum[-1]
    if not loops or budget < cycle:
        return 0, int(np.searchsorted(cum, budget, side="right"))
    if math.isinf(budget):
        raise ValueError("infinite budget has no finite run count")
    k = int(budget // cycle)
    while k > 0 and k * cycle > budget:
        k -= 1
    j = int(np.searchsorted(cum, budget - k * cycle, side="right"))
    if j == len(t):
        k, j = k + 1, 0
    return k, j


def _solved_by(p: np.ndarray, k: int, j: int) -> float:
    """``1 - S**k * s[j]`` without cancellation when success chances are tiny."""
    with np.errstate(divide="ignore"):
        log_pass = math.fsum(np.log1p(-p))
        log_prefix = math.fsum(np.log1p(-p[:j]))
    log_fail = (k * log_pass if k else 0.0) + log_prefix
    if log_fail == -math.inf:
        return 1.0
    return float(-math.expm1(log_fail))


def _pow(base: float, k: int) -> float:
    if k == 0:
        return 1.0
    if base == 0.0:
        return 0.0
    return math.exp(k * math.log(base))


def analytic_hitting_time(entries: Iterable[tuple[float, float]],
                          policy: ExecutionPolicy = ExecutionPolicy()) -> float:
    """Expected evaluations until the first successful run.

    Looping schedules use the closed form over an infinite horizon. Under
    ``stop`` the expectation is conditioned on success among the runs that
    fit into the budget; pair it with :func:`schedule_success_prob`.
    """
    t, p = _as_arrays(entries)
    s = _survivals(p)
    if policy.loops:
        solve_mass = math.fsum(p * s[:-1])
        if solve_mass == 0:
            raise ModelError("divergent: no schedule entry can succeed")
        return math.fsum(t * s[:-1]) / solve_mass
    _, n = _fit(t, policy.budget, loops=False)
    hit = p[:n] * s[:n]
    solve_mass = math.fsum(hit)
    if solve_mass == 0:
        raise ModelError("divergent: no run within the budget can succeed")
    return math.fsum(np.cumsum(t[:n]) * hit) / solve_mass


def schedule_success_prob(entries: Iterable[tuple[float, float]],
                          policy: ExecutionPolicy = ExecutionPolicy()) -> float:
    t, p = _as_arrays(entries)
    s = _survivals(p)
    if math.isinf(policy.budget) and policy.loops:
        return 0.0 if s[-1] == 1.0 else 1.0
    k, j = _fit(t, policy.budget, policy.loops)
    return _solved_by(p, k, j)


def expected_consumption(entries: Iterable[tuple[float, float]],
                         policy: ExecutionPolicy = ExecutionPolicy()) -> float:
    """Expected evaluations spent by one budget-limited execution.

    Execution stops at the first success, when the schedule ends (``stop``),
    or when the budget runs out; a run cut off by the budget still burns the
    remaining evaluations.
    """
    t, p = _as_arrays(entries)
    s = _survivals(p)
    cum = np.cumsum(t)
    if math.isinf(policy.budget):
        if policy.loops:
            if s[-1] == 1.0:
                return math.inf
            return analytic_hitting_time(zip(t, p), policy)
        return math.fsum(t * s[:-1])
    k, j = _fit(t, policy.budget, policy.loops)
    spent = 0.0
    if k > 0:
        pass_cost = math.fsum(t * s[:-1])
        S = s[-1]
        if S == 1.0:
            geometric = float(k)
        else:
            pass_solve = math.fsum(p * s[:-1])
            geometric = _solved_by(p, k, 0) / pass_solve
        spent += pass_cost * geometric
    lead = _pow(s[-1], k)
    spent += lead * math.fsum(t[:j] * s[:j])
    has_next = policy.loops or j < len(t)
    if has_next:
        used = k * cum[-1] + (cum[j - 1] if j > 0 else 0.0)
        spent += lead * s[j] * max(policy.budget - used, 0.0)
    return spent


def _entries_for(schedule: Schedule, table: PerfTable, problem: ProblemKey
                 ) -> list[tuple[float, float]]:
    out = []
    cache: dict[str, tuple[float, float]] = {}
    for alg in schedule.algorithms:
        pair = cache.get(alg)
        if pair is None:
            c = table.cell(alg, problem)
            pair = cache[alg] = (c.mean_runtime, c.success_rate)
        out.append(pair)
    return out


def evaluate_entries(entries: Sequence[tuple[float, float]], problem: ProblemKey,
                     policy: ExecutionPolicy,
                     penalty_factor: float = DEFAULT_PENALTY_FACTOR) -> ProblemEval:
    prob = schedule_success_prob(entries, policy)
    spent = expected_consumption(entries, policy)
    if prob <= 0:
        value = penalty_factor * problem.dim
    elif policy.loops:
        value = analytic_hitting_time(entries, policy)
    else:
        value = spent / prob
    return ProblemEval(problem, float(prob), float(spent), float(value))


def schedule_ert(schedule: Schedule, table: PerfTable, problem: ProblemKey,
                 policy: ExecutionPolicy | None = None,
                 penalty_factor: float = DEFAULT_PENALTY_FACTOR) -> ProblemEval:
    """ERT of the schedule treated as one restarting algorithm on ``problem``."""
    if policy is None:
        policy = ExecutionPolicy.for_dim(problem.dim)
    return evaluate_entries(_entries_for(schedule, table, problem), problem, policy,
                            penalty_factor)


def solve_curve_from_entries(entries: Iterable[tuple[float, float]],
                             policy: ExecutionPolicy = ExecutionPolicy()) -> SolveCurve:
    t, p = _as_arrays(entries)
    s = _survivals(p)
    cum = np.cumsum(t)
    budget = policy.budget
    if not policy.loops:
        n = int(np.searchsorted(cum, budget, side="right"))
        return SolveCurve(cum[:n], 1.0 - s[1:n + 1])
    S = s[-1]
    if S == 1.0 or S == 0.0:
        # the curve stays flat after one pass
        cycles = 1
    else:
        cycles = int(math.ceil(math.log(2.0 ** -60) / math.log(S))) + 1
    if not math.isinf(budget):
        k, j = _fit(t, budget, loops=True)
        cycles = min(cycles, k + (j > 0))
    if cycles == 0:
        return SolveCurve(np.empty(0), np.empty(0))
    c = np.arange(cycles)
    evals = (c[:, None] * cum[-1] + cum[None, :]).ravel()
    lead = np.array([_pow(S, int(ci)) for ci in c])
    success = (1.0 - lead[:, None] * s[None, 1:]).ravel()
    keep = evals <= budget
    return SolveCurve(evals[keep], success[keep])


def solve_curve(schedule: Schedule, table: PerfTable, problem: ProblemKey,
                policy: ExecutionPolicy | None = None) -> SolveCurve:
    if policy is None:
        policy = ExecutionPolicy.for_dim(problem.dim)
    return solve_curve_from_entries(_entries_for(schedule, table, problem), policy)


# --- Monte-Carlo bootstrap over raw runs ---------------------------------

class RunPool:
    """Raw run outcomes grouped by (algorithm, problem)."""

    def __init__(self, records: Iterable[RunRecord]):
        groups: dict[tuple[str, ProblemKey], list[tuple[int, bool]]] = {}
        for r in records:
            groups.setdefault((r.algorithm, r.problem), []).append((r.evaluations, r.success))
        self._cells = {
            k: (np.array([e for e, _ in v], dtype=float), np.array([s for _, s in v], dtype=bool))
            for k, v in groups.items()
        }

    def get(self, algorithm: str, problem: ProblemKey) -> tuple[np.ndarray, np.ndarray]:
        try:
            return self._cells[(algorithm, problem)]
        except KeyError:
            raise DataError(f"run pool has no records for {algorithm!r} on {problem}") from None

    @property
    def problems(self) -> list[ProblemKey]:
        return sorted({p for _, p in self._cells}, key=ProblemKey.sort_key)


@dataclass(frozen=True)
class SimulationResult:
    times: np.ndarray    # hitting time, or evaluations consumed when censored
    solved: np.ndarray

    @property
    def trials(self) -> int:
        return len(self.times)

    @property
    def n_solved(self) -> int:
        return int(self.solved.sum())

    @property
    def n_censored(self) -> int:
        return self.trials - self.n_solved

    @property
    def success_rate(self) -> float:
        return self.n_solved / self.trials

    def mean_hitting_time(self) -> float:
        if self.n_solved == 0:
            return math.inf
        return float(self.times[self.solved].mean())

    def standard_error(self) -> float:
        hits = self.times[self.solved]
        if len(hits) < 2:
            return math.inf
        return float(hits.std(ddof=1) / math.sqrt(len(hits)))

    def ert(self) -> float:
        """Ratio estimator: all evaluations spent divided by the number of successes."""
        if self.n_solved == 0:
            return math.inf
        return float(self.times.sum() / self.n_solved)

    def curve(self) -> SolveCurve:
        """Empirical solve curve: fraction of trials solved by each hitting time."""
        hits = np.sort(self.times[self.solved])
        if len(hits) == 0:
            return SolveCurve(np.empty(0), np.empty(0))
        uniq = np.unique(hits)
        counts = np.searchsorted(hits, uniq, side="right")
        return SolveCurve(uniq, counts / self.trials)

    def to_eval(self, problem: ProblemKey,
                penalty_factor: float = DEFAULT_PENALTY_FACTOR) -> ProblemEval:
        value = self.ert() if self.n_solved else penalty_factor * problem.dim
        return ProblemEval(problem, self.success_rate, float(self.times.mean()), value,
                           method="montecarlo")


_CHUNK = 64


def _simulate_trial(rng: np.random.Generator, entry_off, entry_size, flat_evals, flat_succ,
                    n_entries: int, budget: float, loops: bool) -> tuple[float, bool]:
    spent = 0.0
    step = 0
    while True:
        size = _CHUNK if loops else n_entries
        e = (step + np.arange(size)) % n_entries
        u = rng.random(size)
        idx = entry_off[e] + (u * entry_size[e]).astype(np.int64)
        cum = spent + np.cumsum(flat_evals[idx])
        over = np.flatnonzero(cum > budget)
        stop_at = over[0] if len(over) else size
        hits = np.flatnonzero(flat_succ[idx[:stop_at]])
        if len(hits):
            return float(cum[hits[0]]), True
        if len(over):
            return float(budget), False
        if not loops:
            return float(cum[-1]), False
        spent = float(cum[-1])
        step += size


def simulate(schedule: Schedule, pool: RunPool | Iterable[RunRecord], problem: ProblemKey,
             trials: int, policy: ExecutionPolicy | None = None,
             seed: int | Sequence[int] = 0, threads: int = 1) -> SimulationResult:
    """Bootstrap executions of ``schedule`` from recorded runs.

    Each entry draws one run of its algorithm on ``problem`` uniformly with
    replacement. Trial ``i`` uses its own PCG64 stream seeded from
    ``(seed, i)``, so results do not depend on ``threads``. ``seed`` may be
    a tuple of non-negative integers.
    """
    key = [int(seed)] if isinstance(seed, (int, np.integer)) else [int(x) for x in seed]
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if policy is None:
        policy = ExecutionPolicy.for_dim(problem.dim)
    if not isinstance(pool, RunPool):
        pool = RunPool(pool)
    algs = schedule.algorithms
    if not algs:
        raise DataError("schedule has no entries")
    uniq = list(dict.fromkeys(algs))
    cells = [pool.get(a, problem) for a in uniq]
    flat_evals = np.concatenate([c[0] for c in cells])
    flat_succ = np.concatenate([c[1] for c in cells])
    sizes = np.array([len(c[0]) for c in cells], dtype=np.int64)
    offsets = np.concatenate(([0], np.cumsum(sizes)[:-1]))
    pos = [uniq.index(a) for a in algs]
    entry_off, entry_size = offsets[pos], sizes[pos]
    if math.isinf(policy.budget) and policy.loops and not any(c[1].any() for c in cells):
        raise ModelError("divergent: no recorded run of any schedule entry succeeds")

    times = np.empty(trials)
    solved = np.empty(trials, dtype=bool)

    def run(block: range) -> None:
        for i in block:
            rng = np.random.default_rng(key + [i])
            times[i], solved[i] = _simulate_trial(rng, entry_off, entry_size, flat_evals,
                                                  flat_succ, len(algs), policy.budget,
                                                  policy.loops)

    if threads <= 1:
        run(range(trials))
    else:
        step = -(-trials // threads)
        blocks = [range(a, min(a + step, trials)) for a in range(0, trials, step)]
        with ThreadPoolExecutor(max_workers=threads) as ex:
            list(ex.map(run, blocks))
    return SimulationResult(times, solved)
