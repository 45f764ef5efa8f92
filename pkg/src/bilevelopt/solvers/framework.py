"""Single-loop joint updates of (z, v, x) driven by a direction estimator."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from ..directions import (
    CallCounter,
    draw_indices,
    full_directions,
    recompute_averages,
    saba_directions,
    saba_init,
    soba_directions,
)
from ..metrics import Evaluator
from ..oracle import BatchSpec, BilevelOracle, JointState
from ..rng import make_streams
from .record import RunRecord
from .schedule import StepSchedule

log = logging.getLogger(__name__)

METHODS = ("soba", "saba", "full-batch", "two-loop-shia", "two-loop-hia")
DIVERGENCE_NORM = 1e12


@dataclass
class SolverConfig:
    method: str
    schedule: StepSchedule
    batch: BatchSpec = field(default_factory=BatchSpec)
    total_iters: int = 1000
    seed: int = 0
    inner_steps: int = 10
    neumann_steps: int = 10
    eta: float | None = None
    eval_every: int = 100
    # SABA only. "auto" -> 10 * max(n_blocks, m_blocks); None disables.
    recompute_every: int | str | None = "auto"
    memory_init: str = "full"
    time_budget: float | None = None
    # stop once cumulative oracle calls reach this count (the step that
    # crosses it completes)
    call_budget: int | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.total_iters < 0:
            raise ValueError("total_iters must be >= 0")
        if self.inner_steps < 1 or self.neumann_steps < 0:
            raise ValueError("inner_steps must be >= 1 and neumann_steps >= 0")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        if self.memory_init not in ("full", "zeros"):
            raise ValueError("memory_init must be 'full' or 'zeros'")
        if self.call_budget is not None and self.call_budget < 1:
            raise ValueError("call_budget must be >= 1")

    def out_of_calls(self, counter: CallCounter) -> bool:
        return self.call_budget is not None and counter.total >= self.call_budget

    @property
    def neumann_eta(self) -> float:
        return self.schedule.alpha if self.eta is None else self.eta

    def with_steps(self, alpha: float, beta: float) -> "SolverConfig":
        return replace(self, schedule=replace(self.schedule, alpha=alpha, beta=beta))


class _Clock:
    """Accumulates solver time only; paused while metrics are evaluated."""

    def __init__(self):
        self.total = 0.0
        self._start = None

    def start(self):
        self._start = time.perf_counter()

    def stop(self):
        self.total += time.perf_counter() - self._start
        self._start = None


def diverged(state: JointState) -> bool:
    return not state.is_finite() or state.max_norm() > DIVERGENCE_NORM


def run_framework(problem: BilevelOracle, config: SolverConfig, estimator: str | None = None,
                  state0: JointState | None = None, evaluator=None) -> RunRecord:
    """Run ``T = config.total_iters`` joint steps

        z <- z - rho_t Dz,   v <- v - rho_t Dv,   x <- x - gamma_t Dx

    with ``estimator`` in ``{"soba", "saba", "full"}`` (defaults from
    ``config.method``).  A fresh independent ``(i, j)`` is drawn each step from
    the ``inner`` / ``outer`` streams of ``config.seed``.

    ``evaluator`` maps a state to a metrics dict (default :class:`Evaluator`);
    its work is neither timed nor counted.  On divergence the partial record is
    returned with ``status == "diverged"``.
    """
    if estimator is None:
        estimator = {"soba": "soba", "saba": "saba", "full-batch": "full"}.get(config.method)
    if estimator not in ("soba", "saba", "full"):
        raise ValueError(f"method {config.method!r} is not a single-loop estimator")
    dims = problem.dims
    state = (JointState.zeros(dims) if state0 is None else state0).copy()
    state.check(dims)
    evaluator = evaluator or Evaluator(problem)
    streams = make_streams(config.seed)
    rng_in, rng_out = streams["inner"], streams["outer"]
    inner = config.batch.inner_blocks(dims)
    outer = config.batch.outer_blocks(dims)
    n_b, m_b = len(inner), len(outer)
    counter = CallCounter()
    record = RunRecord(method=config.method, seed=config.seed)
    clock = _Clock()

    clock.start()
    memory = None
    if estimator == "saba":
        memory = saba_init(state, problem, config.batch, zeros=config.memory_init == "zeros",
                           counter=counter)
    recompute = config.recompute_every
    if recompute == "auto":
        recompute = 10 * max(n_b, m_b)
    clock.stop()
    record.log(0, evaluator(state), counter.grad, counter.hvp, clock.total)

    schedule = config.schedule
    T = config.total_iters
    for t in range(1, T + 1):
        clock.start()
        rho, gamma = schedule.rho(t), schedule.gamma(t)
        if estimator == "full":
            d = full_directions(state, problem, counter)
        else:
            draw = draw_indices(rng_in, rng_out, n_b, m_b)
            if estimator == "soba":
                d = soba_directions(state, draw, problem, config.batch, counter)
            else:
                d, memory = saba_directions(state, draw, memory, problem, counter)
                if recompute and t % recompute == 0:
                    recompute_averages(memory, overwrite=True)
        state.z = state.z - rho * d.dz
        state.v = state.v - rho * d.dv
        state.x = state.x - gamma * d.dx
        clock.stop()
        if diverged(state):
            record.status = "diverged"
            record.message = f"iterate blew up at t={t}"
            log.info("%s seed=%d diverged at t=%d", config.method, config.seed, t)
            with np.errstate(all="ignore"):
                record.log(t, _nan_metrics(record), counter.grad, counter.hvp, clock.total)
            break
        if t % config.eval_every == 0 or t == T or config.out_of_calls(counter):
            record.log(t, evaluator(state), counter.grad, counter.hvp, clock.total)
        if config.out_of_calls(counter):
            record.message = f"oracle budget reached at t={t}"
            break
        if config.time_budget is not None and clock.total > config.time_budget:
            record.status = "budget"
            record.message = f"time budget exhausted at t={t}"
            if record.rows[-1]["t"] != t:
                record.log(t, evaluator(state), counter.grad, counter.hvp, clock.total)
            break
    record.final_state = state
    record.extras["memory"] = memory
    return record


def _nan_metrics(record: RunRecord) -> dict:
    names = record.metric_names or ["h", "grad_norm2", "delta_z", "delta_v"]
    # running mean / infimum columns are recomputed by RunRecord.log
    return {k: float("nan") for k in names if k not in ("grad_norm2_avg", "grad_norm2_inf")}
