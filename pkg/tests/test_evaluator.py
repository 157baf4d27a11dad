import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import P1, P2, table1_pool, table_from
from greedy_restart.errors import DataError, ModelError
from greedy_restart.evaluator import (ExecutionPolicy, RunPool, SolveCurve,
                                      analytic_hitting_time, evaluate_entries,
                                      expected_consumption, schedule_ert,
                                      schedule_success_prob, simulate,
                                      solve_curve_from_entries, _survivals)
from greedy_restart.perfdata import ProblemKey, RunRecord
from greedy_restart.scheduler import GreedyConfig, build_schedule

LOOP = ExecutionPolicy()


def unrolled(entries, policy):
    """The sequence of runs an execution may start, with its cumulative cost."""
    out, clock, i = [], 0.0, 0
    while True:
        t, p = entries[i % len(entries)]
        if not policy.loops and i >= len(entries):
            return out, False
        if clock + t > policy.budget:
            return out, True
        clock += t
        out.append((clock, p))
        i += 1


def enumerate_outcomes(entries, policy):
    """Success probability and expected spend by walking every run in order."""
    runs, cut = unrolled(entries, policy)
    alive, spent, prob = 1.0, 0.0, 0.0
    for clock, p in runs:
        spent += alive * p * clock
        prob += alive * p
        alive *= 1.0 - p
    last = runs[-1][0] if runs else 0.0
    spent += alive * (policy.budget if cut else last)
    return prob, spent


entry = st.tuples(st.floats(1, 100), st.floats(0, 1))
entry_lists = st.lists(entry, min_size=1, max_size=5)


def test_single_entry_is_ert():
    assert analytic_hitting_time([(10.0, 0.2)]) == 50.0
    assert analytic_hitting_time([(7.0, 1.0)]) == 7.0


def test_two_problem_example_by_hand():
    entries = [(10.0, 0.2), (10.0, 0.05)]
    assert analytic_hitting_time(entries) == pytest.approx(75.0, rel=1e-12)
    assert analytic_hitting_time(entries[::-1]) == pytest.approx(81.25, rel=1e-12)


def test_divergent_loop_raises():
    with pytest.raises(ModelError, match="divergent"):
        analytic_hitting_time([(1.0, 0.0), (2.0, 0.0)])
    assert expected_consumption([(1.0, 0.0)], LOOP) == math.inf
    assert schedule_success_prob([(1.0, 0.0)], LOOP) == 0.0


@pytest.mark.parametrize("bad", [[], [(0.0, 0.5)], [(1.0, 1.5)], [(math.inf, 0.5)],
                                 [(1.0, math.nan)]])
def test_invalid_entries(bad):
    with pytest.raises(ValueError):
        analytic_hitting_time(bad)


@settings(max_examples=300, deadline=None)
@given(entry_lists)
def test_rotation_recursion(entries):
    if not any(p for _, p in entries):
        return
    rotated = entries[1:] + entries[:1]
    t1, p1 = entries[0]
    if not any(p for _, p in rotated):
        return
    expected = t1 + (1 - p1) * analytic_hitting_time(rotated)
    assert analytic_hitting_time(entries) == pytest.approx(expected, rel=1e-9)


@settings(max_examples=300, deadline=None)
@given(entry_lists, st.floats(1, 2000), st.sampled_from(["loop_schedule", "stop"]))
def test_finite_budget_matches_enumeration(entries, budget, after):
    policy = ExecutionPolicy(budget, after)
    prob, spent = enumerate_outcomes(entries, policy)
    assert schedule_success_prob(entries, policy) == pytest.approx(prob, rel=1e-9, abs=1e-12)
    assert expected_consumption(entries, policy) == pytest.approx(spent, rel=1e-9, abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(entry_lists, st.floats(1, 2000))
def test_stop_hitting_time_is_conditional_mean(entries, budget):
    policy = ExecutionPolicy(budget, "stop")
    runs, _ = unrolled(entries, policy)
    alive, num, den = 1.0, 0.0, 0.0
    for clock, p in runs:
        num += alive * p * clock
        den += alive * p
        alive *= 1 - p
    if den == 0:
        with pytest.raises(ModelError):
            analytic_hitting_time(entries, policy)
    else:
        assert analytic_hitting_time(entries, policy) == pytest.approx(num / den, rel=1e-9)


def test_log_space_survivals_match_direct_product():
    p = np.array([0.9995, 0.5, 0.99999, 0.2])
    direct = np.concatenate(([1.0], np.cumprod(1 - p)))
    assert np.allclose(_survivals(p), direct, rtol=1e-12, atol=0)
    long = np.full(20_000, 1e-4)
    s = _survivals(long)
    assert s[-1] == pytest.approx((1 - 1e-4) ** 20_000, rel=1e-10)


def test_long_schedule_closed_form_stays_accurate():
    # geometric series with ratio (1 - p): the hitting time is t / p
    entries = [(3.0, 1e-4)] * 20_000
    assert analytic_hitting_time(entries) == pytest.approx(3.0 / 1e-4, rel=1e-9)


def test_evaluate_entries_penalty_and_stop_ratio():
    prob = ProblemKey.make(1, 4, 0.0)
    ev = evaluate_entries([(5.0, 0.0)], prob, ExecutionPolicy(100.0, "stop"))
    assert ev.success_prob == 0.0 and ev.schedule_ert == 4e7
    ev = evaluate_entries([(10.0, 0.5)], prob, ExecutionPolicy(15.0, "stop"))
    # one run fits and nothing follows it: ERT = spend / success
    assert ev.success_prob == 0.5 and ev.expected_time == 10.0 and ev.schedule_ert == 20.0
    ev = evaluate_entries([(10.0, 0.5)], prob, ExecutionPolicy(15.0))
    # a looping schedule starts a second run that the budget cuts off
    assert ev.expected_time == 12.5 and ev.schedule_ert == 20.0


def test_solve_curve_two_problem_example(table1):
    sched = build_schedule(table1, GreedyConfig(max_restarts=2))
    entries = [(10.0, 0.2), (10.0, 0.05)]
    c = solve_curve_from_entries(entries, LOOP)
    assert c.points[:3] == [(10.0, pytest.approx(0.2)), (20.0, pytest.approx(0.24)),
                            (30.0, pytest.approx(1 - 0.76 * 0.8))]
    assert c.success[-1] == pytest.approx(1.0, abs=1e-15)
    assert np.all(np.diff(c.success) >= 0)
    assert sched.algorithms == ["A1", "A2"]


def test_solve_curve_respects_budget_and_stop():
    c = solve_curve_from_entries([(10.0, 0.5)], ExecutionPolicy(35.0))
    assert c.evaluations.tolist() == [10.0, 20.0, 30.0]
    c = solve_curve_from_entries([(10.0, 0.5), (10.0, 0.5)], ExecutionPolicy(math.inf, "stop"))
    assert c.evaluations.tolist() == [10.0, 20.0] and c.success[-1] == 0.75


def test_solve_curve_at():
    c = SolveCurve(np.array([10.0, 20.0]), np.array([0.3, 0.6]))
    assert c.at([0, 10, 15, 20, 1e9]).tolist() == [0.0, 0.3, 0.3, 0.6, 0.6]
    assert len(c) == 2


def test_schedule_ert_uses_budget_per_dim(table1):
    sched = build_schedule(table1, GreedyConfig(max_restarts=4))
    ev = schedule_ert(sched, table1, P1)
    assert ev.schedule_ert == pytest.approx(75.0, rel=1e-9)
    assert ev.success_prob == pytest.approx(1.0)


# --- Monte-Carlo ------------------------------------------------------------

def test_run_pool_missing_cell():
    pool = RunPool(table1_pool(10))
    assert pool.problems == [P1, P2]
    with pytest.raises(DataError):
        pool.get("A3", P1)


def test_simulation_deterministic_and_thread_independent(table1):
    sched = build_schedule(table1, GreedyConfig(max_restarts=2))
    pool = RunPool(table1_pool())
    a = simulate(sched, pool, P1, 3000, seed=42)
    b = simulate(sched, pool, P1, 3000, seed=42, threads=4)
    c = simulate(sched, pool, P1, 3000, seed=43)
    assert np.array_equal(a.times, b.times) and np.array_equal(a.solved, b.solved)
    assert not np.array_equal(a.times, c.times)
    # trial i depends only on (seed, i)
    d = simulate(sched, pool, P1, 1000, seed=42)
    assert np.array_equal(d.times, a.times[:1000])


def test_simulation_matches_analytic_under_budget(table1):
    sched = build_schedule(table1, GreedyConfig(max_restarts=2))
    pool = RunPool(table1_pool())
    policy = ExecutionPolicy(55.0)
    entries = [(10.0, 0.2), (10.0, 0.05)]
    sim = simulate(sched, pool, P1, 40_000, policy, seed=1)
    prob = schedule_success_prob(entries, policy)
    se = math.sqrt(prob * (1 - prob) / sim.trials)
    assert abs(sim.success_rate - prob) <= 4 * se
    assert sim.n_censored == sim.trials - sim.n_solved
    assert np.all(sim.times[~sim.solved] == 55.0)
    spend = expected_consumption(entries, policy)
    assert abs(sim.times.mean() - spend) <= 4 * sim.times.std() / math.sqrt(sim.trials)
    curve = sim.curve()
    assert curve.success[-1] == pytest.approx(sim.success_rate)
    ev = sim.to_eval(P1)
    assert ev.method == "montecarlo" and ev.schedule_ert == pytest.approx(sim.ert())


def test_simulation_divergent_and_all_censored():
    recs = [RunRecord("A", P1, 1, 5, False)] * 3
    sched = build_schedule(table_from(["A"], [P1], [[5]], [[0.5]]), GreedyConfig(max_restarts=1))
    with pytest.raises(ModelError):
        simulate(sched, recs, P1, 10, LOOP, seed=0)
    sim = simulate(sched, recs, P1, 10, ExecutionPolicy(12.0), seed=0)
    assert sim.n_solved == 0 and sim.ert() == math.inf
    assert sim.to_eval(P1, penalty_factor=10).schedule_ert == 20.0
    with pytest.raises(ValueError):
        simulate(sched, recs, P1, 0, seed=0)
