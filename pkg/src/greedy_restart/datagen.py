"""Desk-scale run-record generators.

Two sources:

* parametric synthetic portfolios, where every (algorithm, problem) pair has
  a prescribed run-length distribution and per-run success probability;
* a miniature optimizer suite (random search, a (1+1)-ES hill climber and
  compass search) on toy functions, recorded in fixed-target form.

All randomness comes from numpy's PCG64 seeded through ``SeedSequence``
with integer entropy ``[seed, ...stream key]``, so every run has its own
stream and outputs do not depend on generation order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError
from .perfdata import ProblemKey, RunRecord

RUN_LENGTHS = ("constant", "geometric")
TRAIN_IIDS = range(101, 601)
TEST_IIDS = range(1, 16)


def _rng(*key: int) -> np.random.Generator:
    return np.random.default_rng([int(k) for k in key])


def _target_code(target: float) -> int:
    # stream keys must be non-negative integers
    return int(round((10.0 - target) * 10))


# --- synthetic portfolios -------------------------------------------------

@dataclass(frozen=True)
class CellSpec:
    run_length: str
    mean: float
    success_prob: float

    def __post_init__(self):
        if self.run_length not in RUN_LENGTHS:
            raise DataError(f"unknown run-length distribution {self.run_length!r}")
        if not self.mean >= 1:
            raise DataError(f"mean run length must be >= 1, got {self.mean}")
        if not 0.0 <= self.success_prob <= 1.0:
            raise DataError(f"success probability must be in [0, 1], got {self.success_prob}")


@dataclass
class SyntheticAlgSpec:
    algorithms: list[str]
    cells: dict[tuple[str, ProblemKey], CellSpec]

    @property
    def problems(self) -> list[ProblemKey]:
        return sorted({p for _, p in self.cells}, key=ProblemKey.sort_key)

    @classmethod
    def from_dict(cls, data: Mapping) -> "SyntheticAlgSpec":
        try:
            cells = {}
            for c in data["cells"]:
                key = (str(c["algorithm"]), ProblemKey.make(c["fid"], c["dim"], c["target"]))
                cells[key] = CellSpec(c.get("run_length", "constant"), float(c["mean"]),
                                      float(c["success_prob"]))
            algorithms = list(data.get("algorithms") or dict.fromkeys(a for a, _ in cells))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed synthetic spec: {exc}") from None
        return cls(algorithms, cells)

    def to_dict(self) -> dict:
        return {
            "algorithms": list(self.algorithms),
            "cells": [
                {"algorithm": a, "fid": p.fid, "dim": p.dim, "target": p.target,
                 "run_length": c.run_length, "mean": c.mean, "success_prob": c.success_prob}
                for (a, p), c in self.cells.items()
            ],
        }


def gen_synthetic_records(spec: SyntheticAlgSpec, n_runs: int, seed: int,
                          iids: Iterable[int] = (1,)) -> list[RunRecord]:
    """``n_runs`` records per (algorithm, problem, instance)."""
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    iids = list(iids)
    records = []
    for (alg, prob), cell in spec.cells.items():
        a_idx = spec.algorithms.index(alg)
        for iid in iids:
            rng = _rng(seed, a_idx, prob.fid, prob.dim, _target_code(prob.target), iid)
            if cell.run_length == "constant":
                lengths = np.full(n_runs, max(1, int(round(cell.mean))))
            else:
                lengths = rng.geometric(1.0 / cell.mean, size=n_runs)
            success = rng.random(n_runs) < cell.success_prob
            records.extend(RunRecord(alg, prob, iid, int(n), bool(s))
                           for n, s in zip(lengths, success))
    return records


def table1_spec(dim: int = 2, target: float = 0.0) -> SyntheticAlgSpec:
    """Two algorithms with 10-evaluation runs and mirrored 20%/5% success rates."""
    p1, p2 = ProblemKey.make(1, dim, target), ProblemKey.make(2, dim, target)
    cells = {
        ("A1", p1): CellSpec("constant", 10, 0.2), ("A1", p2): CellSpec("constant", 10, 0.05),
        ("A2", p1): CellSpec("constant", 10, 0.05), ("A2", p2): CellSpec("constant", 10, 0.2),
    }
    return SyntheticAlgSpec(["A1", "A2"], cells)


def complementary_pair_spec(dims: Sequence[int] = (2, 5), n_functions: int = 6,
                            targets: Sequence[float] = (1.0, 0.0, -1.0)) -> SyntheticAlgSpec:
    """A fast specialist and a slow robust solver with mirrored strengths.

    ``fast`` runs are short and succeed often on the first half of the
    functions; ``robust`` runs cost five times as much and succeed often on
    the second half. Tighter targets lower every success probability.
    """
    cells = {}
    half = n_functions // 2
    for dim in dims:
        for fid in range(1, n_functions + 1):
            for k, target in enumerate(targets):
                prob = ProblemKey.make(fid, dim, target)
                shrink = 0.6 ** k
                if fid <= half:
                    fast, robust = 0.4 * shrink, 0.15 * shrink
                else:
                    fast, robust = 0.04 * shrink, 0.5 * shrink
                cells[("fast", prob)] = CellSpec("geometric", 20.0 * dim, fast)
                cells[("robust", prob)] = CellSpec("geometric", 100.0 * dim, robust)
    return SyntheticAlgSpec(["fast", "robust"], cells)


def split_records(spec: SyntheticAlgSpec, seed: int, train_runs: int = 1,
                  test_runs: int = 20, train_iids: Iterable[int] = TRAIN_IIDS,
                  test_iids: Iterable[int] = TEST_IIDS) -> list[RunRecord]:
    """Records for training and test instances, drawn from independent streams."""
    return (gen_synthetic_records(spec, train_runs, seed, train_iids)
            + gen_synthetic_records(spec, test_runs, seed, test_iids))


# --- toy optimizer suite --------------------------------------------------

def _sphere(x, opt, _):
    return float(np.sum((x - opt) ** 2))


def _ellipsoid(x, opt, _):
    d = len(x)
    w = 1e6 ** (np.arange(d) / max(d - 1, 1))
    return float(np.sum(w * (x - opt) ** 2))


def _two_peak(x, opt, other):
    # narrow global basin at opt (f = 0), broad local basin at other (f = 1)
    return float(min(4.0 * np.sum((x - opt) ** 2), np.sum((x - other) ** 2) + 1.0))


TOY_FUNCTIONS: dict[str, tuple[int, Callable]] = {
    "sphere": (1, _sphere),
    "ellipsoid": (2, _ellipsoid),
    "two_peak": (3, _two_peak),
}
LOWER, UPPER = -5.0, 5.0


def _random_search(f, dim, budget, rng):
    xs = rng.uniform(LOWER, UPPER, size=(budget, dim))
    return np.array([f(x) for x in xs])


def _hill_climber(f, dim, budget, rng):
    """(1+1)-ES with the 1/5th success rule; stops once the step size collapses."""
    x = rng.uniform(LOWER, UPPER, dim)
    fx = f(x)
    sigma = 0.2 * (UPPER - LOWER)
    trace = [fx]
    while len(trace) < budget and sigma > 1e-10:
        y = np.clip(x + sigma * rng.standard_normal(dim), LOWER, UPPER)
        fy = f(y)
        trace.append(fy)
        if fy <= fx:
            x, fx = y, fy
            sigma *= 1.5
        else:
            sigma *= 1.5 ** -0.25
    return np.array(trace)


def _coordinate_search(f, dim, budget, rng):
    """Compass search with step halving; stops when the step is tiny."""
    x = rng.uniform(LOWER, UPPER, dim)
    fx = f(x)
    step = 0.25 * (UPPER - LOWER)
    trace = [fx]
    while len(trace) < budget and step > 1e-10:
        improved = False
        for i in rng.permutation(dim):
            for sign in (1.0, -1.0):
                if len(trace) >= budget:
                    break
                y = x.copy()
                y[i] = min(max(y[i] + sign * step, LOWER), UPPER)
                fy = f(y)
                trace.append(fy)
                if fy < fx:
                    x, fx, improved = y, fy, True
                    break
        if not improved:
            step *= 0.5
    return np.array(trace)


TOY_SOLVERS: dict[str, Callable] = {
    "random_search": _random_search,
    "hill_climber": _hill_climber,
    "coordinate_search": _coordinate_search,
}


@dataclass
class ToyBenchSpec:
    functions: list[tuple[str, int]] = field(
        default_factory=lambda: [("sphere", 2), ("ellipsoid", 2), ("two_peak", 2)])
    solvers: list[str] = field(default_factory=lambda: list(TOY_SOLVERS))
    budget: int = 1000
    n_runs: int = 1
    targets: list[float] = field(default_factory=lambda: [1.0, 0.0, -1.0, -2.0, -4.0])
    seed: int = 0
    iids: list[int] = field(default_factory=lambda: [1])

    def __post_init__(self):
        if self.n_runs < 1:
            raise DataError("n_runs must be >= 1")
        for name, dim in self.functions:
            if name not in TOY_FUNCTIONS:
                raise DataError(f"unknown toy function {name!r}")
            if self.budget < dim:
                raise DataError("budget must be at least the dimension")
        for s in self.solvers:
            if s not in TOY_SOLVERS:
                raise DataError(f"unknown toy solver {s!r}")

    @classmethod
    def from_dict(cls, data: Mapping) -> "ToyBenchSpec":
        data = dict(data)
        if "functions" in data:
            data["functions"] = [(str(n), int(d)) for n, d in data["functions"]]
        try:
            return cls(**data)
        except TypeError as exc:
            raise DataError(f"malformed toy spec: {exc}") from None


def _instance_optima(fid: int, dim: int, iid: int, seed: int):
    rng = _rng(seed, 0, fid, dim, iid)
    opt = rng.uniform(-4.0, 4.0, dim)
    other = rng.uniform(-4.0, 4.0, dim)
    return opt, other


def hitting_times(trace: np.ndarray, targets: Sequence[float]) -> list[tuple[int, bool]]:
    """First evaluation reaching each precision ``10**target``, or the run length."""
    best = np.minimum.accumulate(trace)
    out = []
    for target in targets:
        hit = np.flatnonzero(best <= 10.0 ** target)
        out.append((int(hit[0]) + 1, True) if len(hit) else (len(trace), False))
    return out


def run_toy_portfolio(spec: ToyBenchSpec) -> list[RunRecord]:
    records = []
    for name, dim in spec.functions:
        fid, func = TOY_FUNCTIONS[name]
        for iid in spec.iids:
            opt, other = _instance_optima(fid, dim, iid, spec.seed)

            def f(x, opt=opt, other=other, func=func):
                return func(x, opt, other)

            for s_idx, solver in enumerate(spec.solvers):
                for run in range(spec.n_runs):
                    rng = _rng(spec.seed, 1 + s_idx, fid, dim, iid, run)
                    trace = TOY_SOLVERS[solver](f, dim, spec.budget, rng)
                    for target, (evals, ok) in zip(spec.targets, hitting_times(trace, spec.targets)):
                        records.append(RunRecord(solver, ProblemKey.make(fid, dim, target),
                                                 iid, evals, ok))
    return records


PRESETS = ("table1", "complementary_pair", "toy_suite")


def preset_records(name: str, seed: int) -> list[RunRecord]:
    """Train and test records (iids 101-600 and 1-15) for a named preset."""
    if name == "table1":
        return split_records(table1_spec(), seed)
    if name == "complementary_pair":
        return split_records(complementary_pair_spec(), seed)
    if name == "toy_suite":
        train = ToyBenchSpec(seed=seed, iids=list(range(101, 161)))
        test = ToyBenchSpec(seed=seed, iids=list(TEST_IIDS), n_runs=2)
        return run_toy_portfolio(train) + run_toy_portfolio(test)
    raise DataError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")


def load_spec(path: str) -> SyntheticAlgSpec | ToyBenchSpec:
    """Load a JSON generator spec; ``{"kind": "toy", ...}`` selects the toy suite."""
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise DataError("no such file", path=path) from None
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed JSON: {exc}", path=path) from None
    if data.get("kind") == "toy":
        return ToyBenchSpec.from_dict({k: v for k, v in data.items() if k != "kind"})
    return SyntheticAlgSpec.from_dict(data)
