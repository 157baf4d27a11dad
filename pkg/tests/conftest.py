import warnings

import pytest

from greedy_restart.perfdata import Cell, PerfTable, ProblemKey, RunRecord

P1 = ProblemKey.make(1, 2, 0.0)
P2 = ProblemKey.make(2, 2, 0.0)


def table_from(algorithms, problems, t, p, n_runs=20):
    """PerfTable with mean runtime ``t[a][j]`` and success rate ``p[a][j]``.

    Success rates must be multiples of ``1 / n_runs``.
    """
    cells = {}
    for i, a in enumerate(algorithms):
        for j, prob in enumerate(problems):
            n_success = round(p[i][j] * n_runs)
            assert abs(n_success - p[i][j] * n_runs) < 1e-9
            cells[(a, prob)] = Cell(n_runs, round(t[i][j] * n_runs), n_success)
    return PerfTable(list(algorithms), list(problems), cells)


@pytest.fixture
def table1():
    """Two algorithms, 10 evaluations per run, success 0.2/0.05 mirrored."""
    return table_from(["A1", "A2"], [P1, P2], [[10, 10], [10, 10]], [[0.2, 0.05], [0.05, 0.2]])


def table1_pool(n=100):
    """Run records whose empirical success rates match the table1 fixture exactly."""
    records = []
    for alg, probs in (("A1", (0.2, 0.05)), ("A2", (0.05, 0.2))):
        for prob, rate in zip((P1, P2), probs):
            k = round(rate * n)
            records += [RunRecord(alg, prob, 1, 10, i < k) for i in range(n)]
    return records


@pytest.fixture
def quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        yield


_ACCEPTANCE = []


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance.py" in report.nodeid:
        _ACCEPTANCE.append((report.nodeid.split("::")[-1], report.outcome))


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for name, outcome in _ACCEPTANCE:
            terminalreporter.write_line(f"{'PASS' if outcome == 'passed' else 'FAIL'}  {name}")
