"""Acceptance criteria, each at its stated tolerance.

Run ``pytest tests/test_acceptance.py -v`` or ``python tests/test_acceptance.py``.
Either prints one PASS/FAIL line per criterion.
"""

import csv
import math
import sys
import time
import warnings
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))
from conftest import P1, P2, table1_pool, table_from  # noqa: E402

from greedy_restart import cli  # noqa: E402
from greedy_restart.datagen import complementary_pair_spec, split_records  # noqa: E402
from greedy_restart.errors import ModelError  # noqa: E402
from greedy_restart.evaluator import (ExecutionPolicy, analytic_hitting_time,  # noqa: E402
                                      schedule_ert, simulate, solve_curve)
from greedy_restart.metrics import (MetricKind, build_report, ecdf_profile,  # noqa: E402
                                    vbs_synthesis)
from greedy_restart.perfdata import ert, ingest_runs, read_runs_csv  # noqa: E402
from greedy_restart.protocols import ExperimentPlan, lopo_folds, \
    records_digest, run_lopo  # noqa: E402
from greedy_restart.protocols import split_records as split_by_instance  # noqa: E402
from greedy_restart.scheduler import GreedyConfig, build_schedule, iter_greedy  # noqa: E402

LOOP = ExecutionPolicy()


def _table1():
    return table_from(["A1", "A2"], [P1, P2], [[10, 10], [10, 10]], [[0.2, 0.05], [0.05, 0.2]])


def _close(a, b, rel=1e-9):
    return math.isclose(a, b, rel_tol=rel, abs_tol=0.0)


# 1 -------------------------------------------------------------------------

def test_criterion_1_two_problem_example_exact():
    t0 = time.perf_counter()
    table = _table1()
    assert [ert(table, "A1", P1), ert(table, "A1", P2)] == [50.0, 200.0]
    assert [ert(table, "A2", P1), ert(table, "A2", P2)] == [200.0, 50.0]
    assert (ert(table, "A1", P1) + ert(table, "A1", P2)) / 2 == 125.0

    schedule = build_schedule(table, GreedyConfig(max_restarts=200))
    assert schedule.algorithms == ["A1", "A2"] * 100

    e1 = schedule_ert(schedule, table, P1, LOOP).schedule_ert
    e2 = schedule_ert(schedule, table, P2, LOOP).schedule_ert
    assert _close(e1, 75.0) and _close(e2, 81.25)
    assert _close((e1 + e2) / 2, 78.125)

    solvers = {a: {p: ert(table, a, p) for p in (P1, P2)} for a in ("A1", "A2")}
    solvers["GRS"] = {P1: e1, P2: e2}
    vbs = {p: v for p, (v, _) in vbs_synthesis(table).items()}
    report = build_report(MetricKind.MEAN_ERT, solvers, ["A1", "A2"], vbs)
    assert report.sbs == "A1" and report.sbs_value == 125.0 and report.vbs_value == 50.0
    # exact gap from the exact closed-form ERTs
    assert (125.0 - 78.125) / (125.0 - 50.0) == 0.625
    assert _close(report.gap_closed["GRS"], 0.625, 1e-12)
    assert time.perf_counter() - t0 < 1.0


# 2 -------------------------------------------------------------------------

def test_criterion_2_solve_curves_monotone_and_mixture_at_20():
    t0 = time.perf_counter()
    table = _table1()
    schedule = build_schedule(table, GreedyConfig(max_restarts=200))
    curves = [solve_curve(schedule, table, p, LOOP) for p in (P1, P2)]
    for c in curves:
        assert np.all(np.diff(c.evaluations) > 0)
        assert np.all(np.diff(c.success) >= 0)
    grid = np.arange(1.0, 2001.0)
    mixture = ecdf_profile(curves, grid)
    fractions = [pt.solved_fraction for pt in mixture]
    assert all(b >= a for a, b in zip(fractions, fractions[1:]))
    at20 = ecdf_profile(curves, [20.0])[0].solved_fraction
    assert abs(at20 - 0.24) <= 1e-9
    assert time.perf_counter() - t0 < 1.0


# 3 -------------------------------------------------------------------------

def _rotation_oracle(t, p):
    """Solve E_i = t_i + (1 - p_i) E_{i+1} for all rotations at once."""
    n = len(t)
    a = np.eye(n)
    for i in range(n):
        a[i, (i + 1) % n] -= 1.0 - p[i]
    return np.linalg.solve(a, np.asarray(t, dtype=float))


def _brute_force_oracle(t, p, horizon=20):
    """Enumerate the first ``horizon`` runs, then add the expected tail."""
    n = len(t)
    alive, clock, total = 1.0, 0.0, 0.0
    for k in range(horizon):
        i = k % n
        clock += t[i]
        total += alive * p[i] * clock
        alive *= 1.0 - p[i]
    start = horizon % n
    rt, rp = t[start:] + t[:start], p[start:] + p[:start]
    survive, pass_cost = 1.0, 0.0
    for ti, pi in zip(rt, rp):
        pass_cost += survive * ti
        survive *= 1.0 - pi
    tail = pass_cost / (1.0 - survive)
    return total + alive * (clock + tail)


def _random_entry_lists(count, seed=20240601):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        n = int(rng.integers(1, 6))
        t = rng.uniform(1.0, 100.0, n).tolist()
        kind = rng.random(n)
        p = np.where(kind < 0.1, 0.0, np.where(kind < 0.15, 1.0, rng.uniform(0, 1, n))).tolist()
        out.append((t, p))
    return out


def test_criterion_3_closed_form_matches_oracles():
    t0 = time.perf_counter()
    checked = 0
    for t, p in _random_entry_lists(200):
        entries = list(zip(t, p))
        if not any(p):
            with pytest.raises(ModelError):
                analytic_hitting_time(entries, LOOP)
            continue
        got = analytic_hitting_time(entries, LOOP)
        assert _close(got, _rotation_oracle(t, p)[0]), (t, p)
        assert _close(got, _brute_force_oracle(t, p)), (t, p)
        checked += 1
    assert checked >= 150
    assert time.perf_counter() - t0 < 1.0


# 4 -------------------------------------------------------------------------

def test_criterion_4_monte_carlo_within_four_standard_errors():
    t0 = time.perf_counter()
    table = _table1()
    schedule = build_schedule(table, GreedyConfig(max_restarts=2))
    pool = table1_pool()
    for prob, expected in ((P1, 75.0), (P2, 81.25)):
        sim = simulate(schedule, pool, prob, 100_000, LOOP, seed=(7, prob.fid))
        assert sim.n_solved == sim.trials
        assert abs(sim.mean_hitting_time() - expected) <= 4 * sim.standard_error()
    assert time.perf_counter() - t0 < 10.0


# 5 -------------------------------------------------------------------------

def _random_table(rng, dominant=False):
    n_alg = int(rng.integers(1, 9))
    n_prob = int(rng.integers(1, 51))
    n_runs = 20
    algs = [f"a{i}" for i in range(n_alg)]
    probs = [P1._replace(fid=j + 1) for j in range(n_prob)]
    t = rng.integers(1, 1000, (n_alg, n_prob)).astype(float)
    p = rng.integers(0, n_runs + 1, (n_alg, n_prob)) / n_runs
    if dominant:
        d = int(rng.integers(n_alg))
        p[d] = np.maximum(p.max(axis=0), 1 / n_runs)
        t[d] = np.maximum(np.floor(t.min(axis=0) / 2), 1)
        others = np.arange(n_alg) != d
        t[others] = np.maximum(t[others], t[d] + 1)
    return table_from(algs, probs, t, p, n_runs), algs, probs, t, p, d if dominant else None


def test_criterion_5_scheduler_invariants():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    config = GreedyConfig(max_restarts=30)
    n_tables = 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        while n_tables < 1000:
            dominant = n_tables % 4 == 0
            table, algs, probs, t, p, d = _random_table(rng, dominant)
            if not p.any():
                continue
            n_tables += 1
            steps = list(iter_greedy(table, config))
            for s in steps:
                if s.residual > 0:
                    assert abs(math.fsum(s.weights) - 1.0) <= 1e-12
            base = [s.algorithm for s in steps]

            scaled = table_from(algs, probs, t * 7, p)
            assert [s.algorithm for s in iter_greedy(scaled, config)] == base

            perm = rng.permutation(len(probs))
            shuffled = table_from(algs, [probs[j] for j in perm], t[:, perm], p[:, perm])
            assert [s.algorithm for s in iter_greedy(shuffled, config)] == base

            if dominant:
                assert set(base) == {algs[d]}
    assert time.perf_counter() - t0 < 10.0


# 6 -------------------------------------------------------------------------

def test_criterion_6_end_to_end_complementary_pair(tmp_path):
    t0 = time.perf_counter()
    runs = tmp_path / "runs.csv"
    assert cli.main(["datagen", "--preset", "complementary_pair", "--seed", "11",
                     "--out", str(runs)]) == 0
    records = read_runs_csv(runs)
    for dim in (2, 5):
        sched = tmp_path / f"dim{dim}.json"
        evals = tmp_path / f"eval{dim}.csv"
        assert cli.main(["build", "--runs", str(runs), "--dim", str(dim),
                         "--train-iids", "101-600", "--out", str(sched)]) == 0
        assert cli.main(["eval", "--schedule", str(sched), "--runs", str(runs),
                         "--test-iids", "1-15", "--out", str(evals)]) == 0
        with open(evals, newline="") as fh:
            grs = {(int(r["fid"]), float(r["target"])): float(r["schedule_ert"])
                   for r in csv.DictReader(fh)}
        test = ingest_runs([r for r in records if r.problem.dim == dim and r.instance <= 15])
        solvers = {a: {p: ert(test, a, p) for p in test.problems} for a in test.algorithms}
        solvers["GRS"] = {p: grs[(p.fid, p.target)] for p in test.problems}
        vbs = {p: v for p, (v, _) in vbs_synthesis(test).items()}
        report = build_report(MetricKind.MEAN_ERT, solvers, test.algorithms, vbs)
        assert report.per_solver["GRS"] < report.per_solver["fast"]
        assert report.per_solver["GRS"] < report.per_solver["robust"]
        assert report.gap_closed["GRS"] > 0.4, (dim, report)

    # deterministic: a second generation with the same seed is byte-identical
    again = tmp_path / "again.csv"
    assert cli.main(["datagen", "--preset", "complementary_pair", "--seed", "11",
                     "--out", str(again)]) == 0
    assert again.read_bytes() == runs.read_bytes()
    assert time.perf_counter() - t0 < 30.0


# 7 -------------------------------------------------------------------------

def test_criterion_7_lopo_mechanics():
    t0 = time.perf_counter()
    records = split_records(complementary_pair_spec(dims=(2,)), seed=3)
    fids = sorted({r.problem.fid for r in records})
    assert fids == [1, 2, 3, 4, 5, 6]
    folds = lopo_folds(fids)
    assert [f.fold for f in folds] == fids

    plan = ExperimentPlan(dims=(2,))
    for spec in folds:
        split = split_by_instance(records, spec)
        assert records_digest(split.train) != records_digest(split.test)
        assert {r.problem.fid for r in split.train}.isdisjoint({r.problem.fid for r in split.test})
        assert {r.instance for r in split.train}.isdisjoint({r.instance for r in split.test})

    result = run_lopo(records, plan)
    assert sorted(result.folds) == fids
    for fid, res in result.folds.items():
        dim_res = res.dims[2]
        assert {p.fid for p in dim_res.problems} == {fid}
        assert dim_res.train_digest != dim_res.test_digest
        assert dim_res.train_iids.isdisjoint(dim_res.test_iids)
    assert sorted({p.fid for p in result.combined.dims[2].problems}) == fids
    assert time.perf_counter() - t0 < 30.0


# 8 -------------------------------------------------------------------------

@pytest.mark.skip(reason="needs the full benchmark data-collection campaign with real "
                         "optimizers; covered by criteria 5-7 at desk scale")
def test_criterion_8_full_benchmark_numbers():
    pass


def main() -> int:
    import tempfile
    failed = 0
    for name, fn in sorted(globals().items()):
        if not name.startswith("test_criterion_"):
            continue
        if name.endswith("_8_full_benchmark_numbers"):
            print(f"SKIP  {name}  (not reproducible at desk scale)")
            continue
        try:
            if "tmp_path" in fn.__code__.co_varnames[:fn.__code__.co_argcount]:
                with tempfile.TemporaryDirectory() as tmp:
                    fn(Path(tmp))
            else:
                fn()
            print(f"PASS  {name}")
        except Exception as exc:  # noqa: BLE001
            failed += 1
            print(f"FAIL  {name}: {type(exc).__name__}: {exc}")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
