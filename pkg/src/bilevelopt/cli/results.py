"""Long-format result tables, their CSV form and seed aggregation."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from ..solvers import RunRecord

log = logging.getLogger(__name__)

COUNT_COLUMNS = ("t", "grad_calls", "hvp_calls", "oracle_calls", "wall_time")
X_AXES = ("t", "oracle_calls", "wall_time")
AGGREGATIONS = ("median", "mean", "inf")


class IncompatibleTables(ValueError):
    """Cells of one table report different metric sets."""


class ResultRow(NamedTuple):
    method: str
    seed: int
    t: int
    oracle_calls: int
    wall_time: float
    metric_name: str
    metric_value: float
    status: str


FIELDS = ResultRow._fields


def _same(a, b) -> bool:
    if isinstance(a, float) and isinstance(b, float):
        return a == b or (math.isnan(a) and math.isnan(b))
    return a == b


@dataclass
class ResultTable:
    """Rows ``(method, seed, t, oracle_calls, wall_time, metric_name,
    metric_value, status)``; a cell is one ``(method, seed)`` pair and its
    ``status`` is ``ok``, ``budget`` or ``diverged``."""

    rows: list = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    def __eq__(self, other):
        if not isinstance(other, ResultTable) or len(self) != len(other):
            return False
        return all(_same(a, b) for r, s in zip(self.rows, other.rows) for a, b in zip(r, s))

    @classmethod
    def from_record(cls, method: str, record: RunRecord) -> "ResultTable":
        names = record.metric_names
        rows = [ResultRow(method, int(record.seed), int(row["t"]), int(row["oracle_calls"]),
                          float(row["wall_time"]), name, float(row[name]), record.status)
                for row in record.rows for name in names]
        return cls(rows)

    @classmethod
    def concat(cls, tables) -> "ResultTable":
        return cls([row for table in tables for row in table.rows])

    def cells(self) -> dict:
        """``{(method, seed): [rows]}`` in first-seen order."""
        out = {}
        for row in self.rows:
            out.setdefault((row.method, row.seed), []).append(row)
        return out

    def metric_names(self) -> list:
        """The metric set shared by every cell; raises if cells disagree."""
        names = None
        for key, rows in self.cells().items():
            cell = sorted({r.metric_name for r in rows})
            if names is None:
                names, first = cell, key
            elif cell != names:
                raise IncompatibleTables(f"cell {key} reports {cell} but cell {first} "
                                         f"reports {names}")
        return names or []

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(FIELDS)
            for row in self.rows:
                # repr keeps every float bit so the file reads back exactly
                writer.writerow([row.method, row.seed, row.t, row.oracle_calls,
                                 repr(row.wall_time), row.metric_name,
                                 repr(row.metric_value), row.status])

    @classmethod
    def read_csv(cls, path) -> "ResultTable":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or tuple(header) != FIELDS:
                raise ValueError(f"{path}: expected header {','.join(FIELDS)}")
            rows = []
            for lineno, rec in enumerate(reader, start=2):
                if len(rec) != len(FIELDS):
                    raise ValueError(f"{path}:{lineno}: expected {len(FIELDS)} fields")
                rows.append(ResultRow(rec[0], int(rec[1]), int(rec[2]), int(rec[3]),
                                      float(rec[4]), rec[5], float(rec[6]), rec[7]))
        return cls(rows)


@dataclass
class Curves:
    """Aggregated curves: one row per ``(method, t, metric)`` with the matching
    (aggregated) oracle-call and wall-time coordinates."""

    aggregation: str
    rows: list
    excluded: dict

    FIELDS = ("method", "t", "oracle_calls", "wall_time", "metric_name", "value", "n_seeds")

    def curve(self, method: str, metric: str, x_axis: str = "t"):
        if x_axis not in X_AXES:
            raise ValueError(f"x_axis must be one of {X_AXES}")
        pts = [r for r in self.rows if r["method"] == method and r["metric_name"] == metric]
        return (np.array([r[x_axis] for r in pts], dtype=float),
                np.array([r["value"] for r in pts], dtype=float))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.FIELDS)
            for r in self.rows:
                writer.writerow([r["method"], r["t"], repr(r["oracle_calls"]),
                                 repr(r["wall_time"]), r["metric_name"], repr(r["value"]),
                                 r["n_seeds"]])


def _combine(values: np.ndarray, aggregation: str) -> float:
    return float(np.mean(values) if aggregation == "mean" else np.median(values))


def summarize(table: ResultTable, aggregation: str = "median") -> Curves:
    """Aggregate seeds per method at each logged ``t``.

    ``median`` / ``mean`` combine the seeds' values; ``inf`` first replaces each
    seed's trace by its running infimum over ``t`` and then takes the median,
    so its curves never increase.  The oracle-call and wall-time coordinates
    of a point are the median (``mean`` for mean aggregation) over the seeds
    logged at that ``t``, which gives the three x-axes.  Diverged cells are
    left out and counted in ``excluded``.
    """
    if aggregation not in AGGREGATIONS:
        raise ValueError(f"aggregation must be one of {AGGREGATIONS}")
    names = table.metric_names()
    cells = table.cells()
    if not cells:
        raise ValueError("empty result table")
    excluded, kept = {}, {}
    for (method, seed), rows in cells.items():
        if any(r.status == "diverged" for r in rows):
            excluded[method] = excluded.get(method, 0) + 1
        else:
            kept.setdefault(method, []).append(rows)
    for method, count in excluded.items():
        log.warning("summarize: %d diverged cell(s) of %s excluded", count, method)
    if not kept:
        raise ValueError("no completed cell to summarize (all diverged)")
    combine_x = "mean" if aggregation == "mean" else "median"
    out = []
    for method, seeds in kept.items():
        traces = []
        for rows in seeds:
            by_t = {}
            for r in rows:
                by_t.setdefault(r.t, {"oracle_calls": r.oracle_calls, "wall_time": r.wall_time})
                by_t[r.t][r.metric_name] = r.metric_value
            traces.append(by_t)
        if aggregation == "inf":
            for by_t in traces:
                best = {name: math.inf for name in names}
                for t in sorted(by_t):
                    for name in names:
                        best[name] = min(best[name], by_t[t][name])
                        by_t[t][name] = best[name]
        for t in sorted({t for by_t in traces for t in by_t}):
            present = [by_t[t] for by_t in traces if t in by_t]
            calls = _combine(np.array([p["oracle_calls"] for p in present], float), combine_x)
            wall = _combine(np.array([p["wall_time"] for p in present], float), combine_x)
            for name in names:
                values = np.array([p[name] for p in present], dtype=float)
                out.append({"method": method, "t": t, "oracle_calls": calls, "wall_time": wall,
                            "metric_name": name, "value": _combine(values, aggregation),
                            "n_seeds": len(present)})
    return Curves(aggregation, out, excluded)


def read_tables(paths) -> ResultTable:
    return ResultTable.concat(ResultTable.read_csv(Path(p)) for p in paths)
