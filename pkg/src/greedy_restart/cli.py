"""``greedy-restart`` command line.

Exit codes: 0 success, 1 usage error, 2 input data error, 3 numerical or
model error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from dataclasses import replace
from typing import Sequence

from . import __version__
from .datagen import PRESETS, ToyBenchSpec, gen_synthetic_records, \
    load_spec, preset_records, run_toy_portfolio
from .errors import DataError, ModelError
from .evaluator import ExecutionPolicy, RunPool, schedule_ert, simulate, solve_curve
from .metrics import MetricKind, build_report, vbs_synthesis
from .perfdata import DEFAULT_PENALTY_FACTOR, ert, format_runs_csv, ingest_runs, read_runs_csv
from .protocols import GRS, ExperimentPlan, SplitSpec, load_config, run_experiment, run_lopo
from .scheduler import GreedyConfig, Schedule, build_schedule

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_MODEL = 0, 1, 2, 3
OUTPUT_DIR_ENV = "GREEDY_RESTART_OUTPUT_DIR"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _iids(text: str) -> range:
    """``"101-600"`` or ``"7"``."""
    try:
        lo, _, hi = text.partition("-")
        lo_i = int(lo)
        hi_i = int(hi) if hi else lo_i
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an instance range like 101-600, got {text!r}")
    if hi_i < lo_i:
        raise argparse.ArgumentTypeError(f"empty instance range {text!r}")
    return range(lo_i, hi_i + 1)


def _default_out(name: str) -> str:
    return os.path.join(os.environ.get(OUTPUT_DIR_ENV, "."), name)


def _file_digest(path: str) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def _write_text(path: str, text: str) -> None:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _manifest(args, inputs: Sequence[str]) -> dict:
    flags = {k: ([v.start, v.stop - 1] if isinstance(v, range) else v)
             for k, v in sorted(vars(args).items()) if k != "func"}
    return {
        "tool": "greedy-restart",
        "version": __version__,
        "command": args.command,
        "flags": flags,
        "inputs": {p: _file_digest(p) for p in inputs},
        "seed": getattr(args, "seed", None),
    }


def _write_with_manifest(args, path: str, text: str, inputs: Sequence[str]) -> None:
    _write_text(path, text)
    _write_text(path + ".manifest.json", json.dumps(_manifest(args, inputs), indent=2) + "\n")


def _load_schedule(path: str) -> Schedule:
    try:
        with open(path, encoding="utf-8") as fh:
            return Schedule.from_json(fh.read())
    except FileNotFoundError:
        raise DataError("no such file", path=path) from None


def _filter(records, iids: range | None, dim: int | None = None):
    out = [r for r in records
           if (iids is None or r.instance in iids) and (dim is None or r.problem.dim == dim)]
    if not out:
        raise DataError("no run records left after filtering by dimension/instances")
    return out


def _policy(args, dim: int) -> ExecutionPolicy:
    budget = args.budget if args.budget is not None else args.budget_factor * dim
    return ExecutionPolicy(budget, args.after_exhaustion)


# --- subcommands -----------------------------------------------------------

def cmd_datagen(args) -> int:
    inputs = []
    if args.preset:
        records = preset_records(args.preset, args.seed)
    else:
        spec = load_spec(args.spec)
        inputs.append(args.spec)
        if isinstance(spec, ToyBenchSpec):
            spec.seed = args.seed
            records = run_toy_portfolio(spec)
        else:
            records = gen_synthetic_records(spec, args.n_runs, args.seed, args.iids)
    out = args.out or _default_out("runs.csv")
    _write_with_manifest(args, out, format_runs_csv(records), inputs)
    print(f"wrote {len(records)} run records to {out}")
    return EXIT_OK


def cmd_ingest(args) -> int:
    table = ingest_runs(read_runs_csv(args.runs))
    out = args.out or _default_out("table.json")
    _write_with_manifest(args, out, table.to_json(), [args.runs])
    missing = table.missing()
    print(f"{len(table.algorithms)} algorithms, {len(table.problems)} problems, "
          f"{len(missing)} missing cells -> {out}")
    return EXIT_OK


def cmd_build(args) -> int:
    records = _filter(read_runs_csv(args.runs), args.train_iids, args.dim)
    table = ingest_runs(records)
    config = GreedyConfig(args.max_restarts, args.min_residual_mass,
                          drop_globally_unsolved=not args.keep_unsolved)
    schedule = build_schedule(table, config)
    out = args.out or _default_out(f"dim{args.dim}.json")
    _write_with_manifest(args, out, schedule.to_json(), [args.runs])
    print(f"schedule of {len(schedule)} entries for dim {args.dim} -> {out}")
    return EXIT_OK


def _eval_table(args, schedule: Schedule):
    if schedule.dim is None:
        raise DataError("schedule does not record a dimension")
    records = _filter(read_runs_csv(args.runs), args.test_iids, schedule.dim)
    table = ingest_runs(records)
    unknown = set(schedule.algorithms) - set(table.algorithms)
    if unknown:
        raise DataError(f"no run records for scheduled algorithms {sorted(unknown)}")
    return records, table


def cmd_eval(args) -> int:
    schedule = _load_schedule(args.schedule)
    _, table = _eval_table(args, schedule)
    table.require_complete()
    policy = _policy(args, schedule.dim)
    lines = ["fid,dim,target,success_prob,expected_time,schedule_ert"]
    curve_lines = ["fid,dim,target,cum_evals,success_prob"]
    grs = {}
    for p in table.problems:
        ev = schedule_ert(schedule, table, p, policy, args.penalty_factor)
        grs[p] = ev.schedule_ert
        lines.append(f"{p.fid},{p.dim},{p.target:.1f},{ev.success_prob!r},"
                     f"{ev.expected_time!r},{ev.schedule_ert!r}")
        if args.curves:
            for x, y in solve_curve(schedule, table, p, policy).points:
                curve_lines.append(f"{p.fid},{p.dim},{p.target:.1f},{x!r},{y!r}")
    out = args.out or _default_out(f"eval_dim{schedule.dim}.csv")
    _write_with_manifest(args, out, "\n".join(lines) + "\n", [args.schedule, args.runs])
    if args.curves:
        _write_text(args.curves, "\n".join(curve_lines) + "\n")

    solver_erts = {a: {p: ert(table, a, p, args.penalty_factor) for p in table.problems}
                   for a in table.algorithms}
    solver_erts[GRS] = grs
    vbs = {p: v for p, (v, _) in vbs_synthesis(table, args.penalty_factor).items()}
    print("metric,solver,value,gap_closed")
    for m in MetricKind:
        rep = build_report(m, solver_erts, list(table.algorithms), vbs)
        for name, value in rep.per_solver.items():
            print(f"{m.value},{name},{value!r},{rep.gap_closed[name]!r}")
        print(f"{m.value},SBS,{rep.sbs_value!r},0.0")
        print(f"{m.value},VBS,{rep.vbs_value!r},1.0")
    return EXIT_OK


def cmd_simulate(args) -> int:
    schedule = _load_schedule(args.schedule)
    records, table = _eval_table(args, schedule)
    pool = RunPool(records)
    policy = _policy(args, schedule.dim)
    lines = ["fid,dim,target,trials,n_solved,mean_hitting_time,standard_error,ert"]
    trial_lines = ["fid,dim,target,trial,evaluations,solved"]
    for i, p in enumerate(table.problems):
        sim = simulate(schedule, pool, p, args.trials, policy, seed=(args.seed, i),
                       threads=args.threads)
        lines.append(f"{p.fid},{p.dim},{p.target:.1f},{sim.trials},{sim.n_solved},"
                     f"{sim.mean_hitting_time()!r},{sim.standard_error()!r},{sim.ert()!r}")
        if args.per_trial:
            for k, (t, ok) in enumerate(zip(sim.times.tolist(), sim.solved.tolist())):
                trial_lines.append(f"{p.fid},{p.dim},{p.target:.1f},{k},{t!r},{int(ok)}")
    out = args.out or _default_out(f"simulate_dim{schedule.dim}.csv")
    _write_with_manifest(args, out, "\n".join(lines) + "\n", [args.schedule, args.runs])
    if args.per_trial:
        _write_text(args.per_trial, "\n".join(trial_lines) + "\n")
    print(f"simulated {args.trials} trials on {len(table.problems)} problems -> {out}")
    return EXIT_OK


def _plan_and_split(args, records):
    if args.config:
        plan, spec, raw = load_config(args.config)
    else:
        plan, spec, raw = ExperimentPlan(), SplitSpec(), {}
    overrides = {}
    if args.dims:
        overrides["dims"] = tuple(args.dims)
    elif "dims" not in raw:
        overrides["dims"] = tuple(sorted({r.problem.dim for r in records}))
    for name in ("evaluation", "trials", "seed"):
        value = getattr(args, name)
        if value is not None:
            overrides[name] = value
    if args.max_restarts is not None:
        cfg = plan.greedy_config
        overrides["greedy_config"] = GreedyConfig(args.max_restarts, cfg.min_residual_mass,
                                                  cfg.tie_break, cfg.drop_globally_unsolved)
    overrides["threads"] = args.threads
    try:
        plan = replace(plan, **overrides)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.train_iids is not None or args.test_iids is not None:
        spec = SplitSpec(args.train_iids or spec.train_iids, args.test_iids or spec.test_iids,
                         spec.held_out_fids)
    return plan, spec


def _experiment_inputs(args):
    return [args.runs] + ([args.config] if args.config else [])


def cmd_report(args) -> int:
    records = read_runs_csv(args.runs)
    plan, spec = _plan_and_split(args, records)
    result = run_experiment(records, plan, spec)
    out_dir = args.out_dir or os.environ.get(OUTPUT_DIR_ENV, "out")
    manifest = _manifest(args, _experiment_inputs(args))
    result.write(out_dir, {"invocation": manifest})
    _print_all(result)
    return EXIT_OK


def cmd_lopo(args) -> int:
    records = read_runs_csv(args.runs)
    plan, spec = _plan_and_split(args, records)
    result = run_lopo(records, plan, spec)
    out_dir = args.out_dir or os.environ.get(OUTPUT_DIR_ENV, "out")
    manifest = _manifest(args, _experiment_inputs(args))
    manifest["folds"] = sorted(result.folds)
    result.combined.write(out_dir, {"invocation": manifest})
    _print_all(result.combined)
    return EXIT_OK


def _print_all(result) -> None:
    for m, rep in result.all_reports.items():
        gap = rep.gap_closed.get(GRS, math.nan)
        print(f"{m.value}: GRS {rep.per_solver[GRS]:.4g}  SBS {rep.sbs_value:.4g}  "
              f"VBS {rep.vbs_value:.4g}  gap closed {gap:.2%}")


# --- parser ------------------------------------------------------------------

def _add_policy_flags(p) -> None:
    p.add_argument("--budget", type=float, help="total evaluation budget (default 1e6 * dim)")
    p.add_argument("--budget-factor", type=float, default=1e6)
    p.add_argument("--after-exhaustion", choices=["loop_schedule", "stop"],
                   default="loop_schedule")


def _add_experiment_flags(p) -> None:
    p.add_argument("--runs", required=True, help="run-record CSV")
    p.add_argument("--config", help="experiment configuration JSON")
    p.add_argument("--out-dir", help=f"output directory (default ${OUTPUT_DIR_ENV} or ./out)")
    p.add_argument("--dims", type=int, nargs="+")
    p.add_argument("--train-iids", type=_iids)
    p.add_argument("--test-iids", type=_iids)
    p.add_argument("--max-restarts", type=int)
    p.add_argument("--evaluation", choices=["analytic", "montecarlo"])
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int, help="required with --evaluation montecarlo")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="greedy-restart", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("datagen", help="generate run records")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--preset", choices=PRESETS)
    src.add_argument("--spec", help="synthetic or toy generator spec (JSON)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--n-runs", type=int, default=1, help="runs per algorithm, problem, instance")
    p.add_argument("--iids", type=_iids, default=range(1, 2))
    p.add_argument("--out")
    p.set_defaults(func=cmd_datagen)

    p = sub.add_parser("ingest", help="estimate the performance table")
    p.add_argument("--runs", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("build", help="build a greedy restart schedule")
    p.add_argument("--runs", required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--max-restarts", type=int, default=1000)
    p.add_argument("--min-residual-mass", type=float, default=0.0)
    p.add_argument("--keep-unsolved", action="store_true",
                   help="keep problems no algorithm solves in the prior")
    p.add_argument("--train-iids", type=_iids, help="only use these instances (e.g. 101-600)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("eval", help="analytic evaluation of a schedule")
    p.add_argument("--schedule", required=True)
    p.add_argument("--runs", required=True)
    p.add_argument("--test-iids", type=_iids)
    p.add_argument("--penalty-factor", type=float, default=DEFAULT_PENALTY_FACTOR)
    p.add_argument("--curves", help="also write solve curves to this CSV")
    p.add_argument("--out")
    _add_policy_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("simulate", help="Monte-Carlo evaluation over recorded runs")
    p.add_argument("--schedule", required=True)
    p.add_argument("--runs", required=True)
    p.add_argument("--test-iids", type=_iids)
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.add_argument("--per-trial", help="also write every trial to this CSV")
    p.add_argument("--out")
    _add_policy_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="instance-split experiment with report CSVs")
    _add_experiment_flags(p)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("lopo", help="leave-one-problem-out experiment")
    _add_experiment_flags(p)
    p.set_defaults(func=cmd_lopo)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"greedy-restart {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"greedy-restart {args.command}: input error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ModelError as exc:
        print(f"greedy-restart {args.command}: model error: {exc}", file=sys.stderr)
        return EXIT_MODEL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
