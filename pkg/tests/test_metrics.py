import math

import numpy as np
import pytest

from conftest import P1, P2, table_from
from greedy_restart.errors import DataError, ModelError
from greedy_restart.evaluator import SolveCurve
from greedy_restart.metrics import (MetricKind, aggregate, build_report, default_profile_grid,
                                    ecdf_profile, gap_closed, log_ert, rel_ert, sbs_vbs_gap,
                                    single_best, vbs_synthesis)


def test_rel_and_log_ert():
    assert rel_ert(150.0, 50.0) == 3.0
    assert log_ert(1000.0) == 3.0
    with pytest.raises(ValueError):
        rel_ert(1.0, 0.0)
    with pytest.raises(ValueError):
        log_ert(0.0)


def test_aggregate_kinds():
    values = {P1: 100.0, P2: 10.0}
    best = {P1: 50.0, P2: 10.0}
    assert aggregate(values, "mean_ert") == 55.0
    assert aggregate(values, MetricKind.LOG_ERT) == 1.5
    assert aggregate(values, MetricKind.REL_ERT, best) == 1.5
    with pytest.raises(ValueError):
        aggregate(values, MetricKind.REL_ERT)
    with pytest.raises(ValueError):
        aggregate({}, MetricKind.MEAN_ERT)
    with pytest.raises(ValueError):
        aggregate(values, "median")


def test_gap_closed():
    assert gap_closed(78.125, 125.0, 50.0) == 0.625
    assert gap_closed(125.0, 125.0, 50.0) == 0.0
    assert gap_closed(50.0, 125.0, 50.0) == 1.0
    assert gap_closed(150.0, 125.0, 50.0) < 0
    assert gap_closed(7.0, 7.0, 7.0) == 1.0
    with pytest.raises(ModelError, match="degenerate"):
        gap_closed(8.0, 7.0, 7.0)


def test_single_best_and_gap_helper():
    assert single_best({"a": 3.0, "b": 2.0, "c": 2.0}) == "b"
    assert sbs_vbs_gap({"a": 125.0, "b": 125.0}, 50.0, 78.125) == 0.625


def test_vbs_synthesis_picks_per_problem_best(table1):
    vbs = vbs_synthesis(table1)
    assert vbs == {P1: (50.0, "A1"), P2: (50.0, "A2")}


def test_vbs_tie_goes_to_first_algorithm():
    table = table_from(["B", "A"], [P1], [[10], [10]], [[0.5], [0.5]])
    assert vbs_synthesis(table)[P1] == (20.0, "B")


def test_vbs_uses_penalty_for_unsolved():
    table = table_from(["A"], [P1], [[10]], [[0.0]])
    assert vbs_synthesis(table, penalty_factor=3.0)[P1] == (6.0, "A")


def test_profile_grid():
    grid = default_profile_grid(2)
    assert len(grid) == 101 and grid[0] == 1.0 and grid[-1] == pytest.approx(2e6)
    assert np.all(np.diff(grid) > 0)


def test_ecdf_profile_averages_curves():
    a = SolveCurve(np.array([10.0, 20.0]), np.array([0.5, 1.0]))
    b = SolveCurve(np.array([15.0]), np.array([0.2]))
    pts = ecdf_profile([a, b], [5.0, 10.0, 15.0, 20.0])
    assert [p.solved_fraction for p in pts] == pytest.approx([0.0, 0.25, 0.35, 0.6])
    with pytest.raises(ValueError):
        ecdf_profile([a], [2.0, 1.0])
    with pytest.raises(ValueError):
        ecdf_profile([], [1.0])


def test_build_report(table1):
    solvers = {"A1": {P1: 50.0, P2: 200.0}, "A2": {P1: 200.0, P2: 50.0},
               "GRS": {P1: 75.0, P2: 81.25}}
    vbs = {P1: 50.0, P2: 50.0}
    rep = build_report("mean_ert", solvers, ["A1", "A2"], vbs)
    assert rep.sbs == "A1" and rep.sbs_value == 125.0 and rep.vbs_value == 50.0
    assert rep.gap_closed == {"A1": 0.0, "A2": 0.0, "GRS": 0.625}
    rel = build_report("rel_ert", solvers, ["A1", "A2"], vbs)
    assert rel.vbs_value == 1.0 and rel.per_solver["A1"] == 2.5
    log = build_report("log_ert", solvers, ["A1", "A2"], vbs)
    assert log.per_solver["GRS"] == pytest.approx((math.log10(75) + math.log10(81.25)) / 2)
    with pytest.raises(DataError):
        build_report("mean_ert", solvers, ["A1", "A3"], vbs)


def test_build_report_degenerate_gap_is_nan():
    solvers = {"A": {P1: 10.0}, "GRS": {P1: 12.0}}
    rep = build_report("mean_ert", solvers, ["A"], {P1: 10.0})
    assert rep.gap_closed["A"] == 1.0 and math.isnan(rep.gap_closed["GRS"])
