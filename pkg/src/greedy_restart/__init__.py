"""Greedy restart schedules for portfolios of stochastic optimizers."""

__version__ = "0.1.0"

from .errors import DataError, GreedyRestartError, MissingCellError, ModelError
from .evaluator import (ExecutionPolicy, ProblemEval, RunPool, SimulationResult, SolveCurve,
                        analytic_hitting_time, schedule_ert, schedule_success_prob,
                        simulate, solve_curve)
from .metrics import MetricKind, aggregate, ecdf_profile, log_ert, rel_ert, sbs_vbs_gap, \
    vbs_synthesis
from .perfdata import PerfTable, ProblemKey, RunRecord, ert, ingest_runs, merge_tables, \
    read_runs_csv, write_runs_csv
from .protocols import ExperimentPlan, SplitSpec, lopo_folds, run_experiment, run_lopo, \
    split_records
from .scheduler import GreedyConfig, ProblemDistribution, Schedule, build_schedule, score, \
    select_next, update_distribution

__all__ = [
    "DataError", "GreedyRestartError", "MissingCellError", "ModelError",
    "ExecutionPolicy", "ProblemEval", "RunPool", "SimulationResult", "SolveCurve",
    "analytic_hitting_time", "schedule_ert", "schedule_success_prob", "simulate", "solve_curve",
    "MetricKind", "aggregate", "ecdf_profile", "log_ert", "rel_ert", "sbs_vbs_gap",
    "vbs_synthesis",
    "PerfTable", "ProblemKey", "RunRecord", "ert", "ingest_runs", "merge_tables",
    "read_runs_csv", "write_runs_csv",
    "ExperimentPlan", "SplitSpec", "lopo_folds", "run_experiment", "run_lopo", "split_records",
    "GreedyConfig", "ProblemDistribution", "Schedule", "build_schedule", "score",
    "select_next", "update_distribution",
]
