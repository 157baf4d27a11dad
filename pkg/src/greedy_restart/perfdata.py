"""Run records, performance tables and single-algorithm ERT.

A *problem* is a ``(fid, dim, target)`` triple where ``target`` is the
log10 of the target precision. Instances (``iid``) are independent
repetitions of the same problem. Per (algorithm, problem) pair we keep
exact run counts and evaluation totals, so tables built from shards can be
merged without loss.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from dataclasses import dataclass, field
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np

from .errors import DataError, MissingCellError

DEFAULT_PENALTY_FACTOR = 1e7
CSV_HEADER = ("algorithm", "fid", "dim", "target", "iid", "evaluations", "success")


def default_targets() -> list[float]:
    """The 51 log10 target precisions 2.0, 1.8, ..., -8.0."""
    return [_norm_target(2.0 - 0.2 * i) for i in range(51)]


def _norm_target(target: float) -> float:
    # one decimal, and never -0.0
    return round(float(target), 1) + 0.0


class ProblemKey(NamedTuple):
    fid: int
    dim: int
    target: float

    @classmethod
    def make(cls, fid: int, dim: int, target: float) -> "ProblemKey":
        return cls(int(fid), int(dim), _norm_target(target))

    @classmethod
    def parse(cls, text: str) -> "ProblemKey":
        """Inverse of :meth:`label`."""
        try:
            fid, dim, target = text.split("/")
            return cls.make(int(fid), int(dim), float(target))
        except ValueError:
            raise DataError(f"malformed problem key {text!r}") from None

    def label(self) -> str:
        return f"{self.fid}/{self.dim}/{self.target:.1f}"

    def sort_key(self) -> tuple:
        # dimension, function, then loose targets before tight ones
        return (self.dim, self.fid, -self.target)

    def __str__(self) -> str:
        return self.label()


@dataclass(frozen=True)
class RunRecord:
    algorithm: str
    problem: ProblemKey
    instance: int
    evaluations: int
    success: bool

    def validate(self, line: int | None = None) -> None:
        if not self.algorithm:
            raise DataError("empty algorithm name", line=line)
        if self.evaluations < 1:
            raise DataError(f"evaluations must be >= 1, got {self.evaluations}", line=line)
        if self.problem.fid < 1 or self.problem.dim < 1:
            raise DataError(f"fid and dim must be positive, got {self.problem}", line=line)


@dataclass(frozen=True)
class Cell:
    """Pooled statistics for one (algorithm, problem) pair."""

    n_runs: int
    total_evaluations: int
    n_success: int
    instances: frozenset = field(default_factory=frozenset, compare=False)

    @property
    def mean_runtime(self) -> float:
        return self.total_evaluations / self.n_runs

    @property
    def success_rate(self) -> float:
        return self.n_success / self.n_runs

    def __add__(self, other: "Cell") -> "Cell":
        return Cell(
            self.n_runs + other.n_runs,
            self.total_evaluations + other.total_evaluations,
            self.n_success + other.n_success,
            self.instances | other.instances,
        )


class PerfTable:
    """Estimated mean runtime and success rate per (algorithm, problem).

    Immutable after construction. ``algorithms`` keeps the portfolio
    declaration order, which downstream code uses for tie-breaking.
    """

    def __init__(self, algorithms: Sequence[str], problems: Sequence[ProblemKey],
                 cells: dict[tuple[str, ProblemKey], Cell]):
        if len(set(algorithms)) != len(algorithms):
            raise DataError("algorithm names must be unique")
        if len(set(problems)) != len(problems):
            raise DataError("problem keys must be unique")
        self.algorithms: tuple[str, ...] = tuple(algorithms)
        self.problems: tuple[ProblemKey, ...] = tuple(problems)
        self._cells = {k: v for k, v in cells.items() if v.n_runs > 0}

    def __repr__(self) -> str:
        return (f"PerfTable({len(self.algorithms)} algorithms, {len(self.problems)} problems, "
                f"{len(self._cells)} cells)")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PerfTable):
            return NotImplemented
        return (self.algorithms == other.algorithms and self.problems == other.problems
                and self._cells == other._cells)

    def has(self, algorithm: str, problem: ProblemKey) -> bool:
        return (algorithm, problem) in self._cells

    def cell(self, algorithm: str, problem: ProblemKey) -> Cell:
        try:
            return self._cells[(algorithm, problem)]
        except KeyError:
            raise MissingCellError(algorithm, problem) from None

    def mean_runtime(self, algorithm: str, problem: ProblemKey) -> float:
        return self.cell(algorithm, problem).mean_runtime

    def success_rate(self, algorithm: str, problem: ProblemKey) -> float:
        return self.cell(algorithm, problem).success_rate

    def n_runs(self, algorithm: str, problem: ProblemKey) -> int:
        cell = self._cells.get((algorithm, problem))
        return 0 if cell is None else cell.n_runs

    def missing(self) -> list[tuple[str, ProblemKey]]:
        return [(a, p) for p in self.problems for a in self.algorithms
                if (a, p) not in self._cells]

    def is_complete(self) -> bool:
        return not self.missing()

    def require_complete(self, problems: Iterable[ProblemKey] | None = None) -> None:
        for p in self.problems if problems is None else problems:
            for a in self.algorithms:
                if (a, p) not in self._cells:
                    raise MissingCellError(a, p)

    @property
    def dims(self) -> list[int]:
        return sorted({p.dim for p in self.problems})

    @property
    def fids(self) -> list[int]:
        return sorted({p.fid for p in self.problems})

    def cells(self) -> Iterator[tuple[str, ProblemKey, Cell]]:
        for p in self.problems:
            for a in self.algorithms:
                c = self._cells.get((a, p))
                if c is not None:
                    yield a, p, c

    def restrict(self, problems: Iterable[ProblemKey] | None = None,
                 algorithms: Iterable[str] | None = None) -> "PerfTable":
        """Sub-table over the given problems and/or algorithms (order kept)."""
        keep_p = set(self.problems if problems is None else problems)
        keep_a = set(self.algorithms if algorithms is None else algorithms)
        probs = [p for p in self.problems if p in keep_p]
        algs = [a for a in self.algorithms if a in keep_a]
        cells = {(a, p): c for (a, p), c in self._cells.items() if a in keep_a and p in keep_p}
        return PerfTable(algs, probs, cells)

    def for_dim(self, dim: int) -> "PerfTable":
        return self.restrict(p for p in self.problems if p.dim == dim)

    def matrices(self, problems: Sequence[ProblemKey] | None = None
                 ) -> tuple[np.ndarray, np.ndarray]:
        """Mean runtimes and success rates as (n_algorithms, n_problems) arrays."""
        problems = self.problems if problems is None else problems
        t = np.empty((len(self.algorithms), len(problems)))
        p = np.empty_like(t)
        for j, prob in enumerate(problems):
            for i, alg in enumerate(self.algorithms):
                c = self.cell(alg, prob)
                t[i, j] = c.mean_runtime
                p[i, j] = c.success_rate
        return t, p

    def to_dict(self) -> dict:
        cells: dict[str, dict] = {}
        for a in self.algorithms:
            row = {}
            for p in self.problems:
                c = self._cells.get((a, p))
                if c is None:
                    continue
                row[p.label()] = {
                    "mean_runtime": c.mean_runtime,
                    "success_rate": c.success_rate,
                    "n_runs": c.n_runs,
                    "n_success": c.n_success,
                    "total_evaluations": c.total_evaluations,
                }
            cells[a] = row
        return {
            "algorithms": list(self.algorithms),
            "problems": [p.label() for p in self.problems],
            "cells": cells,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PerfTable":
        try:
            problems = [ProblemKey.parse(s) for s in data["problems"]]
            cells = {}
            for alg, row in data["cells"].items():
                for label, c in row.items():
                    cells[(alg, ProblemKey.parse(label))] = Cell(
                        int(c["n_runs"]), int(c["total_evaluations"]), int(c["n_success"]))
            return cls(data["algorithms"], problems, cells)
        except (KeyError, TypeError) as exc:
            raise DataError(f"malformed performance table: {exc}") from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def digest(self) -> str:
        """Content hash of the table statistics (instance sets excluded)."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def ingest_runs(records: Iterable[RunRecord], algorithms: Sequence[str] | None = None,
                problems: Sequence[ProblemKey] | None = None) -> PerfTable:
    """Pool run records into a :class:`PerfTable` in a single pass.

    If ``algorithms`` (or ``problems``) is given, records outside the
    declaration are rejected and the declared order is kept; otherwise keys
    are discovered from the stream. Successful and unsuccessful runs are
    pooled for the mean runtime.
    """
    declared_a = None if algorithms is None else list(algorithms)
    declared_p = None if problems is None else list(problems)
    seen_a: dict[str, None] = {}
    seen_p: set[ProblemKey] = set()
    acc: dict[tuple[str, ProblemKey], list] = {}
    n = 0
    for n, rec in enumerate(records, start=1):
        rec.validate(line=n)
        if declared_a is not None and rec.algorithm not in declared_a:
            raise DataError(f"undeclared algorithm {rec.algorithm!r}", line=n)
        if declared_p is not None and rec.problem not in declared_p:
            raise DataError(f"undeclared problem {rec.problem}", line=n)
        seen_a.setdefault(rec.algorithm)
        seen_p.add(rec.problem)
        slot = acc.get((rec.algorithm, rec.problem))
        if slot is None:
            slot = acc[(rec.algorithm, rec.problem)] = [0, 0, 0, set()]
        slot[0] += 1
        slot[1] += int(rec.evaluations)
        slot[2] += bool(rec.success)
        slot[3].add(rec.instance)
    if n == 0:
        raise DataError("no data")
    algs = declared_a if declared_a is not None else list(seen_a)
    probs = declared_p if declared_p is not None else sorted(seen_p, key=ProblemKey.sort_key)
    cells = {k: Cell(v[0], v[1], v[2], frozenset(v[3])) for k, v in acc.items()}
    return PerfTable(algs, probs, cells)


def merge_tables(tables: Sequence[PerfTable], strict: bool = False) -> PerfTable:
    """Pool several tables as if their runs had been ingested together.

    With ``strict``, the same (algorithm, problem, instance) appearing in
    more than one table is an error.
    """
    algs: dict[str, None] = {}
    probs: set[ProblemKey] = set()
    cells: dict[tuple[str, ProblemKey], Cell] = {}
    for table in tables:
        algs.update(dict.fromkeys(table.algorithms))
        probs.update(table.problems)
        for a, p, c in table.cells():
            prev = cells.get((a, p))
            if prev is None:
                cells[(a, p)] = c
                continue
            if strict:
                clash = prev.instances & c.instances
                if clash:
                    raise DataError(f"duplicate runs for {a!r} on {p}, instances {sorted(clash)[:5]}")
            cells[(a, p)] = prev + c
    return PerfTable(list(algs), sorted(probs, key=ProblemKey.sort_key), cells)


def ert(table: PerfTable, algorithm: str, problem: ProblemKey,
        penalty_factor: float = DEFAULT_PENALTY_FACTOR) -> float:
    """Expected running time ``t/p``, or ``penalty_factor * dim`` when p = 0."""
    cell = table.cell(algorithm, problem)
    if cell.n_success == 0:
        return penalty_factor * problem.dim
    return cell.mean_runtime / cell.success_rate


# --- run-record CSV -------------------------------------------------------

def parse_runs_csv(stream: Iterable[str], path: str | None = None) -> Iterator[RunRecord]:
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise DataError("no data", path=path) from None
    if tuple(h.strip() for h in header) != CSV_HEADER:
        raise DataError(f"expected header {','.join(CSV_HEADER)}", line=1, path=path)
    for row in reader:
        line = reader.line_num
        if not row:
            continue
        if len(row) != len(CSV_HEADER):
            raise DataError(f"expected {len(CSV_HEADER)} fields, got {len(row)}", line=line, path=path)
        alg, fid, dim, target, iid, evals, success = (x.strip() for x in row)
        try:
            problem = ProblemKey.make(int(fid), int(dim), float(target))
            rec = RunRecord(alg, problem, int(iid), int(evals), _parse_flag(success))
            rec.validate()
        except ValueError as exc:
            message = exc.args[0] if isinstance(exc, DataError) else str(exc)
            raise DataError(message, line=line, path=path) from None
        yield rec


def _parse_flag(text: str) -> bool:
    if text == "1":
        return True
    if text == "0":
        return False
    raise ValueError(f"success must be 0 or 1, got {text!r}")


def read_runs_csv(path: str | os.PathLike) -> list[RunRecord]:
    """Read and validate a run-record CSV file."""
    path = os.fspath(path)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            return list(parse_runs_csv(fh, path=path))
    except FileNotFoundError:
        raise DataError("no such file", path=path) from None


def format_runs_csv(records: Iterable[RunRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in records:
        writer.writerow([r.algorithm, r.problem.fid, r.problem.dim, f"{r.problem.target:.1f}",
                         r.instance, r.evaluations, int(bool(r.success))])
    return buf.getvalue()


def write_runs_csv(records: Iterable[RunRecord], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(format_runs_csv(records))
