"""Stochastic bilevel optimization with jointly evolving inner, adjoint and
outer variables (SOBA / SABA) plus two-loop Neumann baselines."""
from .directions import (
    DirectionTriple,
    IndexDraw,
    SabaMemory,
    full_directions,
    recompute_averages,
    saba_directions,
    saba_init,
    soba_directions,
)
from .oracle import BatchSpec, BilevelOracle, JointState, ProblemDims, batch_mean

__version__ = "0.1.0"

__all__ = [
    "BatchSpec", "BilevelOracle", "DirectionTriple", "IndexDraw", "JointState", "ProblemDims",
    "SabaMemory", "batch_mean", "full_directions", "recompute_averages", "saba_directions",
    "saba_init", "soba_directions",
]
