"""Experiment orchestration: instance splits, LOPO folds and report bundles.

Schedules and every quantity used for selection come from training
instances only. Test instances are used to estimate per-problem
performance of the portfolio members, the synthesized VBS and the
schedule.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Mapping, NamedTuple, Sequence

from . import __version__
from .errors import DataError, ModelError
from .evaluator import ExecutionPolicy, ProblemEval, RunPool, SolveCurve, schedule_ert, \
    simulate, solve_curve, solve_curve_from_entries
from .metrics import AggregateReport, MetricKind, build_report, default_profile_grid, \
    ecdf_profile, gap_closed, rel_ert, vbs_synthesis
from .perfdata import DEFAULT_PENALTY_FACTOR, ProblemKey, RunRecord, \
    default_targets, ert, format_runs_csv, ingest_runs
from .scheduler import GreedyConfig, Schedule, build_schedule

GRS = "GRS"
VBS = "VBS"
SBS = "SBS"
ANALYTIC = "analytic"
MONTECARLO = "montecarlo"


def _iid_range(value) -> range:
    if isinstance(value, range):
        return value
    lo, hi = value
    if lo > hi:
        raise ValueError(f"empty instance range {value}")
    return range(int(lo), int(hi) + 1)


@dataclass(frozen=True)
class SplitSpec:
    train_iids: range = range(101, 601)
    test_iids: range = range(1, 16)
    held_out_fids: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "train_iids", _iid_range(self.train_iids))
        object.__setattr__(self, "test_iids", _iid_range(self.test_iids))
        object.__setattr__(self, "held_out_fids", frozenset(int(f) for f in self.held_out_fids))
        if set(self.train_iids) & set(self.test_iids):
            raise ValueError("train and test instance ranges overlap")

    @property
    def fold(self) -> int | None:
        if len(self.held_out_fids) == 1:
            return next(iter(self.held_out_fids))
        return None

    def to_dict(self) -> dict:
        return {
            "train_iids": [self.train_iids.start, self.train_iids.stop - 1],
            "test_iids": [self.test_iids.start, self.test_iids.stop - 1],
            "held_out_fids": sorted(self.held_out_fids),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "SplitSpec":
        kw = {}
        if "train_iids" in data:
            kw["train_iids"] = data["train_iids"]
        if "test_iids" in data:
            kw["test_iids"] = data["test_iids"]
        if "held_out_fids" in data:
            kw["held_out_fids"] = data["held_out_fids"]
        return cls(**kw)


@dataclass(frozen=True)
class ExperimentPlan:
    dims: tuple = (2, 3, 5, 10)
    targets: tuple | None = tuple(default_targets())
    greedy_config: GreedyConfig = GreedyConfig()
    budget_factor: float = 1e6
    after_exhaustion: str = "loop_schedule"
    metrics: tuple = tuple(MetricKind)
    penalty_factor: float = DEFAULT_PENALTY_FACTOR
    evaluation: str = ANALYTIC
    trials: int = 1000
    seed: int | None = None
    profile_points: int = 101
    all_weighting: str = "dimension"
    threads: int = 1

    def __post_init__(self):
        if not self.dims:
            raise ValueError("dims must be non-empty")
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if self.targets is not None:
            object.__setattr__(self, "targets", tuple(round(float(t), 1) + 0.0
                                                      for t in self.targets))
        object.__setattr__(self, "metrics", tuple(MetricKind(m) for m in self.metrics))
        if self.evaluation not in (ANALYTIC, MONTECARLO):
            raise ValueError(f"evaluation must be {ANALYTIC!r} or {MONTECARLO!r}")
        if self.evaluation == MONTECARLO and self.seed is None:
            raise ValueError("Monte-Carlo evaluation requires a seed")
        if self.all_weighting not in ("dimension", "problem"):
            raise ValueError("all_weighting must be 'dimension' or 'problem'")

    def policy(self, dim: int) -> ExecutionPolicy:
        return ExecutionPolicy.for_dim(dim, self.budget_factor, self.after_exhaustion)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["greedy_config"] = asdict(self.greedy_config)
        out["metrics"] = [m.value for m in self.metrics]
        out["dims"] = list(self.dims)
        out["targets"] = None if self.targets is None else list(self.targets)
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "ExperimentPlan":
        kw = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        if "greedy_config" in kw:
            kw["greedy_config"] = GreedyConfig.from_dict(kw["greedy_config"])
        for k in ("dims", "targets", "metrics"):
            if kw.get(k) is not None:
                kw[k] = tuple(kw[k])
        return cls(**kw)


def load_config(path: str) -> tuple[ExperimentPlan, SplitSpec, dict]:
    """Read a JSON experiment configuration (plan and split fields side by side)."""
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise DataError("no such file", path=path) from None
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed JSON: {exc}", path=path) from None
    known = set(ExperimentPlan.__dataclass_fields__) | set(SplitSpec.__dataclass_fields__)
    unknown = sorted(set(data) - known) if isinstance(data, dict) else []
    if unknown:
        raise DataError(f"unknown configuration keys {unknown}", path=path)
    try:
        return ExperimentPlan.from_dict(data), SplitSpec.from_dict(data), data
    except (TypeError, ValueError) as exc:
        raise DataError(f"invalid configuration: {exc}", path=path) from None


class Split(NamedTuple):
    train: list
    test: list
    n_dropped: int


def split_records(records: Iterable[RunRecord], spec: SplitSpec = SplitSpec()) -> Split:
    train, test, dropped = [], [], 0
    held = spec.held_out_fids
    for r in records:
        if r.instance in spec.train_iids:
            if r.problem.fid in held:
                dropped += 1
            else:
                train.append(r)
        elif r.instance in spec.test_iids:
            if held and r.problem.fid not in held:
                dropped += 1
            else:
                test.append(r)
        else:
            dropped += 1
    if not train:
        raise DataError("training split is empty")
    if not test:
        raise DataError("test split is empty")
    return Split(train, test, dropped)


def lopo_folds(fids: Iterable[int], base: SplitSpec = SplitSpec()) -> list[SplitSpec]:
    fids = sorted(set(int(f) for f in fids))
    if len(fids) < 2:
        raise ValueError("leave-one-problem-out needs at least two functions")
    return [SplitSpec(base.train_iids, base.test_iids, frozenset({f})) for f in fids]


def records_digest(records: Iterable[RunRecord]) -> str:
    rows = format_runs_csv(sorted(records, key=lambda r: (r.algorithm, r.problem.sort_key(),
                                                          r.instance, r.evaluations, r.success)))
    return hashlib.sha256(rows.encode()).hexdigest()


# --- per-dimension evaluation --------------------------------------------

@dataclass
class DimResult:
    dim: int
    portfolio: list[str]
    problems: list[ProblemKey]
    erts: dict[str, dict[ProblemKey, float]]
    curves: dict[str, dict[ProblemKey, SolveCurve]]
    schedules: dict[int | None, Schedule]
    grs_evals: dict[ProblemKey, ProblemEval]
    vbs_choice: dict[ProblemKey, str]
    train_digest: str = ""
    test_digest: str = ""
    train_iids: frozenset = frozenset()
    test_iids: frozenset = frozenset()
    reports: dict[MetricKind, AggregateReport] = field(default_factory=dict)

    @property
    def schedule(self) -> Schedule:
        return next(iter(self.schedules.values()))

    def summarize(self, metrics: Sequence[MetricKind]) -> None:
        solver_erts = {a: self.erts[a] for a in self.portfolio}
        solver_erts[GRS] = self.erts[GRS]
        for m in metrics:
            self.reports[m] = build_report(m, solver_erts, self.portfolio, self.erts[VBS])


def _eval_dim(dim: int, split: Split, plan: ExperimentPlan, fold: int | None) -> DimResult:
    train = [r for r in split.train if r.problem.dim == dim and _target_ok(r, plan)]
    test = [r for r in split.test if r.problem.dim == dim and _target_ok(r, plan)]
    if not train:
        raise DataError(f"no training records for dim {dim}")
    if not test:
        raise DataError(f"no test records for dim {dim}")
    train_table = ingest_runs(train)
    schedule = build_schedule(train_table, plan.greedy_config)
    test_table = ingest_runs(test, algorithms=train_table.algorithms)
    test_table.require_complete()
    if schedule.training_digest != train_table.digest():
        raise ModelError("schedule was not built from the training split")
    train_iids = frozenset(r.instance for r in train)
    test_iids = frozenset(r.instance for r in test)
    if train_iids & test_iids:
        raise ModelError("training and test instances overlap")

    policy = plan.policy(dim)
    problems = list(test_table.problems)
    portfolio = list(test_table.algorithms)
    erts: dict[str, dict] = {a: {} for a in portfolio}
    curves: dict[str, dict] = {a: {} for a in portfolio}
    for a in portfolio:
        for p in problems:
            erts[a][p] = ert(test_table, a, p, plan.penalty_factor)
            c = test_table.cell(a, p)
            curves[a][p] = solve_curve_from_entries([(c.mean_runtime, c.success_rate)], policy)

    vbs = vbs_synthesis(test_table, plan.penalty_factor, problems)
    erts[VBS] = {p: v for p, (v, _) in vbs.items()}
    curves[VBS] = {p: curves[a][p] for p, (_, a) in vbs.items()}

    grs_evals = {}
    curves[GRS] = {}
    pool = RunPool(test) if plan.evaluation == MONTECARLO else None
    for i, p in enumerate(problems):
        if pool is None:
            grs_evals[p] = schedule_ert(schedule, test_table, p, policy, plan.penalty_factor)
            curves[GRS][p] = solve_curve(schedule, test_table, p, policy)
        else:
            sim = simulate(schedule, pool, p, plan.trials, policy,
                           seed=(plan.seed, dim, fold or 0, i))
            grs_evals[p] = sim.to_eval(p, plan.penalty_factor)
            curves[GRS][p] = sim.curve()
    erts[GRS] = {p: e.schedule_ert for p, e in grs_evals.items()}

    return DimResult(
        dim=dim, portfolio=portfolio, problems=problems, erts=erts, curves=curves,
        schedules={fold: schedule}, grs_evals=grs_evals,
        vbs_choice={p: a for p, (_, a) in vbs.items()},
        train_digest=train_table.digest(), test_digest=test_table.digest(),
        train_iids=train_iids, test_iids=test_iids,
    )


def _target_ok(r: RunRecord, plan: ExperimentPlan) -> bool:
    return plan.targets is None or r.problem.target in plan.targets


def _run_units(fn, keys: list, threads: int) -> dict:
    if threads <= 1 or len(keys) <= 1:
        return {k: fn(k) for k in keys}
    with ThreadPoolExecutor(max_workers=threads) as ex:
        results = list(ex.map(fn, keys))
    return dict(zip(keys, results))


# --- bundles ---------------------------------------------------------------

@dataclass
class ExperimentResult:
    plan: ExperimentPlan
    spec: SplitSpec
    dims: dict[int, DimResult]
    all_reports: dict[MetricKind, AggregateReport]
    n_dropped: int = 0
    input_digest: str = ""

    def aggregate_rows(self) -> list[dict]:
        rows = []
        for dim in sorted(self.dims):
            for m in self.plan.metrics:
                rows.extend(_report_rows(dim, self.dims[dim].reports[m],
                                         self.dims[dim].portfolio))
        portfolio = _union_portfolio(self.dims.values())
        for m in self.plan.metrics:
            rows.extend(_report_rows("all", self.all_reports[m], portfolio))
        return rows

    def heatmap_rows(self) -> list[dict]:
        rows = []
        for dim in sorted(self.dims):
            res = self.dims[dim]
            solvers = res.portfolio + [GRS, VBS]
            for p in res.problems:
                best = res.erts[VBS][p]
                for s in solvers:
                    rows.append({"fid": p.fid, "dim": p.dim, "target": f"{p.target:.1f}",
                                 "solver": s, "rel_ert": rel_ert(res.erts[s][p], best)})
        return rows

    def profile_rows(self) -> list[dict]:
        rows = []
        for dim in sorted(self.dims):
            res = self.dims[dim]
            grid = default_profile_grid(dim, self.plan.profile_points, self.plan.budget_factor)
            for s in res.portfolio + [GRS, VBS]:
                pts = ecdf_profile([res.curves[s][p] for p in res.problems], grid)
                rows.extend({"dim": dim, "solver": s, "budget": pt.budget,
                             "solved_fraction": pt.solved_fraction} for pt in pts)
        return rows

    def summary(self) -> dict:
        out = {"dims": {}, "all": {}}
        for dim in sorted(self.dims):
            res = self.dims[dim]
            out["dims"][str(dim)] = {
                "n_problems": len(res.problems),
                "schedule_lengths": {str(k): len(v) for k, v in res.schedules.items()},
                "train_digest": res.train_digest,
                "test_digest": res.test_digest,
                "metrics": {m.value: _report_summary(r) for m, r in res.reports.items()},
            }
        out["all"] = {m.value: _report_summary(r) for m, r in self.all_reports.items()}
        out["evaluation"] = self.plan.evaluation
        out["n_dropped_records"] = self.n_dropped
        return out

    def write(self, out_dir: str, extra_manifest: Mapping | None = None) -> list[str]:
        """Write schedules, report CSVs and ``MANIFEST.json`` below ``out_dir``."""
        written = []
        for dim in sorted(self.dims):
            for fold, sched in sorted(self.dims[dim].schedules.items(),
                                      key=lambda kv: -1 if kv[0] is None else kv[0]):
                name = f"dim{dim}.json" if fold is None else f"dim{dim}.fold{fold}.json"
                written.append(_write(out_dir, os.path.join("schedules", name), sched.to_json()))
        written.append(_write(out_dir, "reports/report_aggregate.csv", _csv(
            ["dim", "metric", "solver", "value", "gap_closed"], self.aggregate_rows())))
        written.append(_write(out_dir, "reports/report_profile.csv", _csv(
            ["dim", "solver", "budget", "solved_fraction"], self.profile_rows())))
        written.append(_write(out_dir, "reports/report_heatmap.csv", _csv(
            ["fid", "dim", "target", "solver", "rel_ert"], self.heatmap_rows())))
        written.append(_write(out_dir, "reports/summary.json",
                              json.dumps(self.summary(), indent=2) + "\n"))
        manifest = {
            "tool": "greedy-restart",
            "version": __version__,
            "input_digest": self.input_digest,
            "seed": self.plan.seed,
            "plan": self.plan.to_dict(),
            "split": self.spec.to_dict(),
            "files": sorted(os.path.relpath(p, out_dir) for p in written),
        }
        if extra_manifest:
            manifest.update(extra_manifest)
        written.append(_write(out_dir, "MANIFEST.json", json.dumps(manifest, indent=2) + "\n"))
        return written


def _union_portfolio(results: Iterable[DimResult]) -> list[str]:
    seen: dict[str, None] = {}
    for r in results:
        seen.update(dict.fromkeys(r.portfolio))
    return list(seen)


def _report_rows(dim, report: AggregateReport, portfolio: Sequence[str]) -> list[dict]:
    rows = []
    names = [a for a in portfolio if a in report.per_solver] + [GRS]
    for s in names:
        rows.append({"dim": dim, "metric": report.metric.value, "solver": s,
                     "value": report.per_solver[s], "gap_closed": report.gap_closed.get(s)})
    rows.append({"dim": dim, "metric": report.metric.value, "solver": SBS,
                 "value": report.sbs_value, "gap_closed": 0.0})
    rows.append({"dim": dim, "metric": report.metric.value, "solver": VBS,
                 "value": report.vbs_value, "gap_closed": 1.0})
    return rows


def _report_summary(r: AggregateReport) -> dict:
    return {"sbs": r.sbs, "sbs_value": r.sbs_value, "vbs_value": r.vbs_value,
            "grs_value": r.per_solver.get(GRS), "grs_gap_closed": r.gap_closed.get(GRS)}


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else str(v)
    return str(v)


def _csv(columns: Sequence[str], rows: Iterable[Mapping]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in columns])
    return buf.getvalue()


def _write(out_dir: str, rel: str, text: str) -> str:
    path = os.path.join(out_dir, rel)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return path


def _all_reports(dims: Mapping[int, DimResult], plan: ExperimentPlan
                 ) -> dict[MetricKind, AggregateReport]:
    """Cross-dimension rows: mean of per-dimension aggregates (optionally problem-weighted)."""
    out = {}
    keys = sorted(dims)
    if plan.all_weighting == "problem":
        weights = {d: len(dims[d].problems) for d in keys}
    else:
        weights = {d: 1 for d in keys}
    total = sum(weights.values())
    portfolio = _union_portfolio(dims.values())
    for m in plan.metrics:
        def mean_of(get):
            return math.fsum(weights[d] * get(dims[d].reports[m]) for d in keys) / total

        per_solver = {}
        for a in portfolio:
            if all(a in dims[d].reports[m].per_solver for d in keys):
                per_solver[a] = mean_of(lambda r, a=a: r.per_solver[a])
        per_solver[GRS] = mean_of(lambda r: r.per_solver[GRS])
        per_solver[SBS] = mean_of(lambda r: r.sbs_value)
        vbs_value = mean_of(lambda r: r.vbs_value)
        gaps = {}
        for name, value in per_solver.items():
            try:
                gaps[name] = gap_closed(value, per_solver[SBS], vbs_value)
            except ModelError:
                gaps[name] = math.nan
        out[m] = AggregateReport(m, per_solver, SBS, vbs_value, gaps)
    return out


def run_experiment(records: Sequence[RunRecord], plan: ExperimentPlan = ExperimentPlan(),
                   spec: SplitSpec = SplitSpec()) -> ExperimentResult:
    """Per dimension: train a schedule, evaluate everything on the test split."""
    records = list(records)
    split = split_records(records, spec)
    fold = spec.fold

    def unit(dim):
        try:
            res = _eval_dim(dim, split, plan, fold)
        except DataError as exc:
            raise DataError(f"[dim {dim}, fold {fold}] {exc}") from exc
        except ModelError as exc:
            raise ModelError(f"[dim {dim}, fold {fold}] {exc}") from exc
        res.summarize(plan.metrics)
        return res

    dims = _run_units(unit, sorted(plan.dims), plan.threads)
    return ExperimentResult(plan, spec, dims, _all_reports(dims, plan), split.n_dropped,
                            records_digest(records))


@dataclass
class LopoResult:
    folds: dict[int, ExperimentResult]
    combined: ExperimentResult


def run_lopo(records: Sequence[RunRecord], plan: ExperimentPlan = ExperimentPlan(),
             base: SplitSpec = SplitSpec(), fids: Iterable[int] | None = None) -> LopoResult:
    """Leave-one-problem-out: one schedule per held-out function and dimension.

    The combined result evaluates each problem with the schedule of the fold
    that held out its function.
    """
    records = list(records)
    if fids is None:
        fids = {r.problem.fid for r in records}
    folds = lopo_folds(fids, base)
    fold_plan = replace(plan, threads=1)

    def unit(spec):
        return run_experiment(records, fold_plan, spec)

    results = _run_units(unit, folds, plan.threads)
    by_fid = {spec.fold: res for spec, res in results.items()}

    dims = {}
    for dim in sorted(plan.dims):
        parts = [by_fid[f].dims[dim] for f in sorted(by_fid)]
        first = parts[0]
        merged = DimResult(
            dim=dim, portfolio=list(first.portfolio), problems=[], erts={}, curves={},
            schedules={}, grs_evals={}, vbs_choice={},
            train_iids=frozenset().union(*(p.train_iids for p in parts)),
            test_iids=frozenset().union(*(p.test_iids for p in parts)),
        )
        for part in parts:
            if part.portfolio != merged.portfolio:
                raise DataError(f"portfolio differs between folds in dim {dim}")
            merged.problems.extend(part.problems)
            for s, vals in part.erts.items():
                merged.erts.setdefault(s, {}).update(vals)
            for s, vals in part.curves.items():
                merged.curves.setdefault(s, {}).update(vals)
            merged.schedules.update(part.schedules)
            merged.grs_evals.update(part.grs_evals)
            merged.vbs_choice.update(part.vbs_choice)
        merged.problems.sort(key=ProblemKey.sort_key)
        merged.summarize(plan.metrics)
        dims[dim] = merged
    combined = ExperimentResult(plan, base, dims, _all_reports(dims, plan),
                                input_digest=records_digest(records))
    return LopoResult(by_fid, combined)
