"""Step-size grid search over ``alpha`` and ``beta = alpha / r``."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..oracle import BilevelOracle, JointState
from .framework import SolverConfig
from .record import RunRecord

log = logging.getLogger(__name__)

# Objectives accumulated along the run keep the config's logging cadence.
RUNNING_OBJECTIVES = ("grad_norm2_avg", "grad_norm2_inf")


def log_grid(start: float, stop: float, num: int) -> np.ndarray:
    """``num`` values between ``start`` and ``stop`` evenly spaced in log scale."""
    return np.geomspace(start, stop, num)


# Grids used for the two benchmark families.
LOGREG_GRID = {"alphas": log_grid(2.0 ** -5, 2.0 ** 3, 9), "rs": log_grid(1e-2, 10.0, 7)}
HYPERCLEAN_GRID = {"alphas": log_grid(1e-3, 100.0, 11), "rs": log_grid(1e-5, 1.0, 11)}


@dataclass
class GridCell:
    alpha: float
    r: float
    beta: float
    values: list
    statuses: list

    @property
    def score(self) -> float:
        finite = [v for v, s in zip(self.values, self.statuses) if s == "ok" and math.isfinite(v)]
        if len(finite) < len(self.values):
            return math.inf
        return float(np.median(finite))


@dataclass
class GridResult:
    objective: str
    cells: list = field(default_factory=list)
    best: GridCell | None = None

    @property
    def converged(self) -> bool:
        return self.best is not None

    @property
    def status(self) -> str:
        return "ok" if self.converged else "no convergent cell"

    @property
    def best_steps(self):
        if self.best is None:
            return None
        return self.best.alpha, self.best.beta


def final_objective(record: RunRecord, objective: str) -> float:
    if record.status == "diverged" or not record.rows:
        return math.inf
    value = record.rows[-1].get(objective, math.nan)
    return float(value) if math.isfinite(value) else math.inf


def _run_cell(args):
    from . import run

    problem, config, state0, objective, evaluator = args
    record = run(problem, config, state0=state0, evaluator=evaluator)
    return final_objective(record, objective), record.status


def grid_search(problem: BilevelOracle, config: SolverConfig, alphas, rs, runs_per_cell: int = 1,
                budget: int | None = None, objective: str = "h",
                state0: JointState | None = None, jobs: int = 1,
                evaluator=None) -> GridResult:
    """Pick ``(alpha, beta)`` minimizing the median final ``objective`` over
    ``runs_per_cell`` replicates (seeds ``config.seed + k``).

    A cell with any diverged replicate scores ``inf``; when every cell does,
    the result has ``best is None`` and status ``"no convergent cell"``.
    ``evaluator`` is shared by all cells and must be picklable when ``jobs > 1``.
    """
    alphas, rs = list(alphas), list(rs)
    if not alphas or not rs:
        raise ValueError("grids must be non-empty")
    T = config.total_iters if budget is None else budget
    tasks, keys = [], []
    for alpha in alphas:
        for r in rs:
            beta = alpha / r
            for k in range(runs_per_cell):
                cfg = config.with_steps(alpha, beta)
                cfg.total_iters = T
                if objective not in RUNNING_OBJECTIVES:
                    cfg.eval_every = max(T, 1)
                cfg.seed = config.seed + k
                tasks.append((problem, cfg, state0, objective, evaluator))
                keys.append((alpha, r, beta))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_cell, tasks))
    else:
        outcomes = [_run_cell(task) for task in tasks]
    result = GridResult(objective=objective)
    cells = {}
    for key, (value, status) in zip(keys, outcomes):
        cell = cells.setdefault(key, GridCell(key[0], key[1], key[2], [], []))
        cell.values.append(value)
        cell.statuses.append(status)
    result.cells = list(cells.values())
    best = min(result.cells, key=lambda c: c.score)
    if math.isfinite(best.score):
        result.best = best
    else:
        log.warning("grid search: no convergent cell among %d", len(result.cells))
    return result
