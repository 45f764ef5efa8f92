from ..oracle import BilevelOracle, JointState
from .framework import METHODS, SolverConfig, run_framework
from .grid import GridResult, grid_search, log_grid
from .neumann import hia, shia
from .record import RunRecord
from .schedule import DEFAULT_EXPONENTS, StepSchedule
from .two_loop import run_two_loop, two_loop_step


def run(problem: BilevelOracle, config: SolverConfig, state0: JointState | None = None,
        evaluator=None) -> RunRecord:
    """Dispatch on ``config.method``."""
    if config.method.startswith("two-loop"):
        return run_two_loop(problem, config, state0=state0, evaluator=evaluator)
    return run_framework(problem, config, state0=state0, evaluator=evaluator)


__all__ = [
    "DEFAULT_EXPONENTS", "GridResult", "METHODS", "RunRecord", "SolverConfig", "StepSchedule",
    "grid_search", "hia", "log_grid", "run", "run_framework", "run_two_loop", "shia",
    "two_loop_step",
]
