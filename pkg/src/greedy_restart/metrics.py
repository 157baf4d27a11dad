"""Aggregate performance measures and portfolio reference points."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import DataError, ModelError
from .evaluator import SolveCurve
from .perfdata import DEFAULT_PENALTY_FACTOR, PerfTable, ProblemKey, ert


class MetricKind(str, enum.Enum):
    MEAN_ERT = "mean_ert"
    REL_ERT = "rel_ert"
    LOG_ERT = "log_ert"


@dataclass(frozen=True)
class ProfilePoint:
    budget: float
    solved_fraction: float


@dataclass
class AggregateReport:
    metric: MetricKind
    per_solver: dict[str, float]
    sbs: str
    vbs_value: float
    gap_closed: dict[str, float] = field(default_factory=dict)

    @property
    def sbs_value(self) -> float:
        return self.per_solver[self.sbs]


def rel_ert(ert_value: float, best_ert: float) -> float:
    if not best_ert > 0:
        raise ValueError(f"best ERT must be positive, got {best_ert}")
    return ert_value / best_ert


def log_ert(ert_value: float) -> float:
    if not ert_value > 0:
        raise ValueError(f"ERT must be positive, got {ert_value}")
    return math.log10(ert_value)


def aggregate(values: Mapping[ProblemKey, float], kind: MetricKind | str,
              best_erts: Mapping[ProblemKey, float] | None = None) -> float:
    """Mean of per-problem ERTs, ERT ratios to the best, or log10 ERTs."""
    kind = MetricKind(kind)
    if not values:
        raise ValueError("cannot aggregate an empty problem set")
    if kind is MetricKind.MEAN_ERT:
        terms = list(values.values())
    elif kind is MetricKind.LOG_ERT:
        terms = [log_ert(v) for v in values.values()]
    else:
        if best_erts is None or set(best_erts) != set(values):
            raise ValueError("rel_ert needs best ERTs for exactly the same problems")
        terms = [rel_ert(v, best_erts[p]) for p, v in values.items()]
    return math.fsum(terms) / len(terms)


def gap_closed(candidate: float, sbs_value: float, vbs_value: float,
               rel_tol: float = 1e-12) -> float:
    """Fraction of the SBS-to-VBS gap recovered by ``candidate``."""
    gap = sbs_value - vbs_value
    if math.isclose(sbs_value, vbs_value, rel_tol=rel_tol, abs_tol=0.0):
        if math.isclose(candidate, vbs_value, rel_tol=rel_tol, abs_tol=0.0):
            return 1.0
        raise ModelError("degenerate SBS-VBS gap: SBS already matches VBS")
    return (sbs_value - candidate) / gap


def single_best(portfolio_aggregates: Mapping[str, float]) -> str:
    """Portfolio member with the smallest aggregate; ties keep mapping order."""
    if not portfolio_aggregates:
        raise ValueError("empty portfolio")
    return min(portfolio_aggregates, key=portfolio_aggregates.__getitem__)


def sbs_vbs_gap(portfolio_aggregates: Mapping[str, float], vbs_aggregate: float,
                candidate: float) -> float:
    sbs = portfolio_aggregates[single_best(portfolio_aggregates)]
    return gap_closed(candidate, sbs, vbs_aggregate)


def vbs_synthesis(table: PerfTable, penalty_factor: float = DEFAULT_PENALTY_FACTOR,
                  problems: Sequence[ProblemKey] | None = None
                  ) -> dict[ProblemKey, tuple[float, str]]:
    """Per problem, the best (penalty-imputed) ERT in the portfolio and its owner."""
    out = {}
    for prob in table.problems if problems is None else problems:
        best_alg, best = None, math.inf
        for alg in table.algorithms:
            value = ert(table, alg, prob, penalty_factor)
            if value < best:
                best_alg, best = alg, value
        out[prob] = (best, best_alg)
    return out


def default_profile_grid(dim: int, n: int = 101, factor: float = 1e6) -> np.ndarray:
    """``n`` log-spaced budgets from 1 to ``factor * dim``."""
    return np.logspace(0.0, math.log10(factor * dim), n)


def ecdf_profile(curves: Sequence[SolveCurve], grid: Sequence[float]) -> list[ProfilePoint]:
    """Mean success probability over problems at each grid budget."""
    if not curves:
        raise ValueError("no curves to aggregate")
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing")
    total = np.zeros(len(grid))
    for c in curves:
        total += c.at(grid)
    frac = np.clip(total / len(curves), 0.0, 1.0)
    # floating sums of non-decreasing curves can wobble by an ulp
    frac = np.maximum.accumulate(frac)
    return [ProfilePoint(float(b), float(f)) for b, f in zip(grid, frac)]


def build_report(metric: MetricKind | str, solver_erts: Mapping[str, Mapping[ProblemKey, float]],
                 portfolio: Sequence[str], vbs_erts: Mapping[ProblemKey, float]
                 ) -> AggregateReport:
    """Aggregate every solver, pick the SBS among ``portfolio`` and compute gaps."""
    metric = MetricKind(metric)
    per_solver = {name: aggregate(v, metric, vbs_erts) for name, v in solver_erts.items()}
    vbs_value = aggregate(vbs_erts, metric, vbs_erts)
    missing = [a for a in portfolio if a not in per_solver]
    if missing:
        raise DataError(f"no values for portfolio members {missing}")
    sbs = single_best({a: per_solver[a] for a in portfolio})
    gaps = {}
    for name, value in per_solver.items():
        try:
            gaps[name] = gap_closed(value, per_solver[sbs], vbs_value)
        except ModelError:
            gaps[name] = math.nan
    return AggregateReport(metric, per_solver, sbs, vbs_value, gaps)
