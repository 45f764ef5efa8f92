"""Two-loop baseline: SGD on the inner problem, Neumann adjoint, outer step.

One outer iteration (stocBiO-style with SHIA, BSA-style with HIA):

    K SGD steps   z <- z - rho_t grad_z G_i(z, x)
    adjoint       v <- -Neumann(grad_z F_j(z, x))
    outer step    x <- x - gamma_t (hess_xz G_i' v + grad_x F_j)
"""
from __future__ import annotations

import logging
import time

from ..directions import CallCounter
from ..metrics import Evaluator
from ..oracle import BilevelOracle, Blocks, JointState
from ..rng import make_streams
from .framework import SolverConfig, _nan_metrics, diverged
from .neumann import hia, shia
from .record import RunRecord

log = logging.getLogger(__name__)


def _draw(blocks: Blocks, rng):
    k = int(rng.integers(len(blocks)))
    return blocks[k], blocks.weight(k)


def two_loop_step(problem: BilevelOracle, state: JointState, rho: float, gamma: float,
                  inner_steps: int, neumann_steps: int, eta: float, streams: dict,
                  inner: Blocks, outer: Blocks, neumann: str = "shia",
                  counter: CallCounter | None = None):
    """One outer iteration; updates ``state`` in place and returns the outer
    direction used."""
    counter = counter if counter is not None else CallCounter()
    rng_in, rng_out = streams["inner"], streams["outer"]
    z, x = state.z, state.x
    for _ in range(inner_steps):
        sl, w = _draw(inner, rng_in)
        g = problem.g_grad(z, x, block=sl)
        counter.grad += sl.stop - sl.start
        z = z - rho * (g if w == 1.0 else w * g)
    sl_j, w_j = _draw(outer, rng_out)
    f_in, f_out = problem.f_fused(z, x, block=sl_j)
    counter.grad += 2 * (sl_j.stop - sl_j.start)
    if w_j != 1.0:
        f_in, f_out = w_j * f_in, w_j * f_out
    estimate = shia if neumann == "shia" else hia
    v = -estimate(problem, z, x, f_in, neumann_steps, eta, seed=streams["neumann"],
                  batch_size=inner.batch_size, counter=counter)
    sl, w = _draw(inner, rng_in)
    cross = problem.g_cross(z, x, v, block=sl)
    counter.hvp += sl.stop - sl.start
    dx = (cross if w == 1.0 else w * cross) + f_out
    state.z, state.v, state.x = z, v, x - gamma * dx
    return dx


def run_two_loop(problem: BilevelOracle, config: SolverConfig,
                 state0: JointState | None = None, evaluator=None) -> RunRecord:
    """``config.total_iters`` outer iterations with ``config.inner_steps`` SGD
    steps and ``config.neumann_steps`` Neumann terms each (defaults 10 / 10);
    the Neumann parameter ``eta`` defaults to the inner step ``alpha``."""
    if config.method not in ("two-loop-shia", "two-loop-hia"):
        raise ValueError(f"method {config.method!r} is not a two-loop method")
    neumann = "shia" if config.method == "two-loop-shia" else "hia"
    dims = problem.dims
    state = (JointState.zeros(dims) if state0 is None else state0).copy()
    state.check(dims)
    evaluator = evaluator or Evaluator(problem)
    streams = make_streams(config.seed)
    inner = config.batch.inner_blocks(dims)
    outer = config.batch.outer_blocks(dims)
    counter = CallCounter()
    record = RunRecord(method=config.method, seed=config.seed)
    wall = 0.0
    record.log(0, evaluator(state), counter.grad, counter.hvp, wall)
    T = config.total_iters
    for t in range(1, T + 1):
        start = time.perf_counter()
        two_loop_step(problem, state, config.schedule.rho(t), config.schedule.gamma(t),
                      config.inner_steps, config.neumann_steps, config.neumann_eta, streams,
                      inner, outer, neumann, counter)
        wall += time.perf_counter() - start
        if diverged(state):
            record.status = "diverged"
            record.message = f"iterate blew up at t={t}"
            log.info("%s seed=%d diverged at t=%d", config.method, config.seed, t)
            record.log(t, _nan_metrics(record), counter.grad, counter.hvp, wall)
            break
        if t % config.eval_every == 0 or t == T or config.out_of_calls(counter):
            record.log(t, evaluator(state), counter.grad, counter.hvp, wall)
        if config.out_of_calls(counter):
            record.message = f"oracle budget reached at t={t}"
            break
        if config.time_budget is not None and wall > config.time_budget:
            record.status = "budget"
            record.message = f"time budget exhausted at t={t}"
            if record.rows[-1]["t"] != t:
                record.log(t, evaluator(state), counter.grad, counter.hvp, wall)
            break
    record.final_state = state
    return record
