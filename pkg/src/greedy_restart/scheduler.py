"""Greedy restart schedule construction.

Starting from a prior over training problems, repeatedly pick the algorithm
with the largest expected solved mass per evaluation,

    score(A) = sum_P pi_P * p_AP / t_AP,

then discount every problem by the chance that the chosen run leaves it
unsolved and renormalize. Sums go through :func:`math.fsum`, which is
exactly rounded, so results do not depend on problem order.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import DataError, ModelError
from .perfdata import PerfTable, ProblemKey

TIE_BREAK_RULES = ("portfolio_order",)


class ProblemDistribution:
    """Normalized weights over a fixed, ordered set of problems."""

    def __init__(self, problems: Sequence[ProblemKey], weights):
        w = np.asarray(weights, dtype=float)
        if w.shape != (len(problems),):
            raise ValueError("one weight per problem required")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and non-negative")
        total = math.fsum(w)
        if total <= 0:
            raise ValueError("weights must have positive mass")
        self.problems = tuple(problems)
        self.weights = w / total
        self.weights.flags.writeable = False

    @classmethod
    def uniform(cls, problems: Sequence[ProblemKey]) -> "ProblemDistribution":
        return cls(problems, np.ones(len(problems)))

    @classmethod
    def from_mapping(cls, weights: Mapping[ProblemKey, float]) -> "ProblemDistribution":
        problems = list(weights)
        return cls(problems, [weights[p] for p in problems])

    def __getitem__(self, problem: ProblemKey) -> float:
        return float(self.weights[self.problems.index(problem)])

    def __len__(self) -> int:
        return len(self.problems)

    def as_dict(self) -> dict[ProblemKey, float]:
        return dict(zip(self.problems, self.weights.tolist()))

    def support(self) -> list[ProblemKey]:
        return [p for p, w in zip(self.problems, self.weights) if w > 0]

    def total(self) -> float:
        return math.fsum(self.weights)


@dataclass(frozen=True)
class GreedyConfig:
    max_restarts: int = 1000
    min_residual_mass: float = 0.0
    tie_break: str = "portfolio_order"
    drop_globally_unsolved: bool = True

    def __post_init__(self):
        if int(self.max_restarts) < 1:
            raise ValueError("max_restarts must be >= 1")
        if not 0 <= self.min_residual_mass < 1:
            raise ValueError("min_residual_mass must be in [0, 1)")
        if self.tie_break not in TIE_BREAK_RULES:
            raise ValueError(f"unknown tie_break rule {self.tie_break!r}")

    @classmethod
    def from_dict(cls, data: Mapping) -> "GreedyConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown greedy config keys {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class ScheduleEntry:
    algorithm: str
    score: float


@dataclass
class Schedule:
    entries: list[ScheduleEntry]
    dim: int | None = None
    config: dict = field(default_factory=dict)
    training_digest: str = ""

    @property
    def algorithms(self) -> list[str]:
        return [e.algorithm for e in self.entries]

    def __len__(self) -> int:
        return len(self.entries)

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "config": dict(self.config),
            "entries": [{"algorithm": e.algorithm, "score": e.score} for e in self.entries],
            "training_digest": self.training_digest,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, data: Mapping) -> "Schedule":
        try:
            entries = [ScheduleEntry(str(e["algorithm"]), float(e["score"]))
                       for e in data["entries"]]
        except (KeyError, TypeError) as exc:
            raise DataError(f"malformed schedule: {exc}") from None
        if not entries:
            raise DataError("schedule has no entries")
        return cls(entries, data.get("dim"), dict(data.get("config", {})),
                   data.get("training_digest", ""))

    @classmethod
    def from_json(cls, text: str) -> "Schedule":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise DataError(f"malformed schedule JSON: {exc}") from None


def score(table: PerfTable, algorithm: str, pi: ProblemDistribution) -> float:
    terms = []
    for prob, w in zip(pi.problems, pi.weights):
        if w == 0:
            continue
        cell = table.cell(algorithm, prob)
        terms.append(w * (cell.success_rate / cell.mean_runtime))
    return math.fsum(terms)


def select_next(table: PerfTable, pi: ProblemDistribution,
                tie_break: str = "portfolio_order") -> str:
    """Argmax of :func:`score`; exact ties go to the first declared algorithm."""
    if tie_break not in TIE_BREAK_RULES:
        raise ValueError(f"unknown tie_break rule {tie_break!r}")
    scores = [score(table, a, pi) for a in table.algorithms]
    best = _argmax_first(scores)
    if scores[best] <= 0:
        raise ModelError("portfolio cannot solve remaining distribution")
    return table.algorithms[best]


def update_distribution(pi: ProblemDistribution, table: PerfTable, algorithm: str
                        ) -> tuple[ProblemDistribution | None, float]:
    """Discount each problem by the failure chance of one run of ``algorithm``.

    Returns the renormalized distribution and the pre-normalization mass.
    When the mass is exactly zero every remaining problem is solved with
    certainty and the distribution is ``None``.
    """
    fail = np.array([1.0 - table.success_rate(algorithm, p) if w > 0 else 1.0
                     for p, w in zip(pi.problems, pi.weights)])
    raw = pi.weights * fail
    residual = math.fsum(raw)
    if residual == 0:
        return None, 0.0
    return ProblemDistribution(pi.problems, raw), residual


def _argmax_first(values) -> int:
    best = 0
    for i, v in enumerate(values):
        if v > values[best]:
            best = i
    return best


@dataclass(frozen=True)
class GreedyStep:
    algorithm: str
    score: float
    weights: np.ndarray  # normalized distribution after the update
    residual: float      # pre-normalization mass of this update
    mass: float          # unnormalized unsolved mass relative to the prior


def effective_problems(table: PerfTable, problems: Sequence[ProblemKey] | None = None,
                       drop_globally_unsolved: bool = True) -> list[ProblemKey]:
    problems = list(table.problems if problems is None else problems)
    table.require_complete(problems)
    if not drop_globally_unsolved:
        return problems
    keep = [p for p in problems
            if any(table.success_rate(a, p) > 0 for a in table.algorithms)]
    if len(keep) < len(problems):
        warnings.warn(f"dropping {len(problems) - len(keep)} problem(s) that no algorithm solves",
                      stacklevel=3)
    return keep


def iter_greedy(table: PerfTable, config: GreedyConfig = GreedyConfig(),
                prior: ProblemDistribution | Mapping[ProblemKey, float] | None = None
                ) -> Iterator[GreedyStep]:
    """Yield the greedy selections one by one until a termination criterion hits."""
    if prior is None:
        problems = effective_problems(table, None, config.drop_globally_unsolved)
        weights = np.ones(len(problems))
    else:
        if not isinstance(prior, ProblemDistribution):
            prior = ProblemDistribution.from_mapping(prior)
        support = set(prior.support())
        problems = effective_problems(table, [p for p in prior.problems if p in support],
                                      config.drop_globally_unsolved)
        weights = np.array([prior[p] for p in problems])
    if not problems:
        raise DataError("no problems left to schedule")

    rate, fail = _rate_matrices(table, problems)
    w = weights / math.fsum(weights)
    mass = 1.0
    for step in range(int(config.max_restarts)):
        scores = [math.fsum(row) for row in rate * w]
        best = _argmax_first(scores)
        if scores[best] <= 0:
            if step == 0:
                raise ModelError("portfolio cannot solve remaining distribution")
            warnings.warn("remaining problems cannot be solved; stopping early", stacklevel=2)
            return
        raw = w * fail[best]
        residual = math.fsum(raw)
        mass *= residual
        if residual > 0:
            w = raw / residual
        else:
            w = raw
        yield GreedyStep(table.algorithms[best], scores[best], w, residual, mass)
        if residual == 0 or mass <= config.min_residual_mass:
            return


def _rate_matrices(table: PerfTable, problems: Sequence[ProblemKey]):
    t, p = table.matrices(problems)
    return p / t, 1.0 - p


def build_schedule(table: PerfTable, config: GreedyConfig = GreedyConfig(),
                   prior: ProblemDistribution | Mapping[ProblemKey, float] | None = None
                   ) -> Schedule:
    """Build a static restart schedule from a complete performance table."""
    entries = [ScheduleEntry(s.algorithm, s.score) for s in iter_greedy(table, config, prior)]
    if not entries:
        raise ModelError("portfolio cannot solve remaining distribution")
    dims = table.dims
    return Schedule(entries, dims[0] if len(dims) == 1 else None, asdict(config),
                    table.digest())
