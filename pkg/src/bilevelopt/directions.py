"""Joint update directions for the inner variable z, adjoint v and outer x.

    D_z = grad_z G(z, x)
    D_v = hess_zz G(z, x) v + grad_z F(z, x)
    D_x = hess_xz G(z, x) v + grad_x F(z, x)

All three are plain means over the samples of G and F, so sampling one inner
block ``i`` and one outer block ``j`` gives unbiased estimates (SOBA), and
replacing every mean by a SAGA-style table gives the variance-reduced SABA
estimates.

When blocks have unequal sizes (a ragged last block), a block mean is scaled by
``n_blocks * block_size / n`` so that a uniformly drawn block still averages to
the full mean.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .oracle import BatchSpec, BilevelOracle, Blocks, JointState


@dataclass
class DirectionTriple:
    dz: np.ndarray
    dv: np.ndarray
    dx: np.ndarray

    def as_tuple(self):
        return self.dz, self.dv, self.dx


@dataclass(frozen=True)
class IndexDraw:
    """Inner block ``i`` and outer block ``j``, drawn independently."""

    i: int
    j: int


@dataclass
class CallCounter:
    """Per-sample oracle evaluations: gradients (of G_i and F_j, counting
    ``grad_z F_j`` and ``grad_x F_j`` separately) and Hessian-vector /
    cross-derivative products."""

    grad: int = 0
    hvp: int = 0

    @property
    def total(self) -> int:
        return self.grad + self.hvp

    def add_inner(self, size: int) -> None:
        self.grad += size
        self.hvp += 2 * size

    def add_outer(self, size: int) -> None:
        self.grad += 2 * size


def draw_indices(inner_rng: np.random.Generator, outer_rng: np.random.Generator,
                 n_blocks: int, m_blocks: int) -> IndexDraw:
    return IndexDraw(int(inner_rng.integers(n_blocks)), int(outer_rng.integers(m_blocks)))


def full_directions(state: JointState, oracle: BilevelOracle,
                    counter: CallCounter | None = None) -> DirectionTriple:
    """Exact directions (means over every sample)."""
    state.check(oracle.dims)
    z, v, x = state.z, state.v, state.x
    g, hv, cv = oracle.g_fused(z, x, v)
    fi, fo = oracle.f_fused(z, x)
    if counter is not None:
        counter.add_inner(oracle.dims.n)
        counter.add_outer(oracle.dims.m)
    return DirectionTriple(g, hv + fi, cv + fo)


def _inner_block(oracle, state, blocks: Blocks, i):
    sl = blocks[i]
    g, hv, cv = oracle.g_fused(state.z, state.x, state.v, block=sl)
    w = blocks.weight(i)
    if w != 1.0:
        g, hv, cv = w * g, w * hv, w * cv
    return g, hv, cv, sl.stop - sl.start


def _outer_block(oracle, state, blocks: Blocks, j):
    sl = blocks[j]
    fi, fo = oracle.f_fused(state.z, state.x, block=sl)
    w = blocks.weight(j)
    if w != 1.0:
        fi, fo = w * fi, w * fo
    return fi, fo, sl.stop - sl.start


def soba_directions(state: JointState, draw: IndexDraw, oracle: BilevelOracle,
                    batch: BatchSpec = BatchSpec(),
                    counter: CallCounter | None = None) -> DirectionTriple:
    """Single-block unbiased estimate; the same ``(i, j)`` feeds all three."""
    inner = batch.inner_blocks(oracle.dims)
    outer = batch.outer_blocks(oracle.dims)
    g, hv, cv, bi = _inner_block(oracle, state, inner, draw.i)
    fi, fo, bj = _outer_block(oracle, state, outer, draw.j)
    if counter is not None:
        counter.add_inner(bi)
        counter.add_outer(bj)
    return DirectionTriple(g, hv + fi, cv + fo)


TABLES = ("g_grad", "g_hvp", "g_cross", "f_in", "f_out")


@dataclass
class SabaMemory:
    """Stored derivative evaluations, one slot per block, and their means.

    ``tables[name]`` has shape ``(n_blocks, p)`` / ``(n_blocks, d)`` for the three
    inner tables and ``(m_blocks, p)`` / ``(m_blocks, d)`` for the outer ones;
    ``averages[name]`` is the running mean of the corresponding table.
    """

    inner_blocks: Blocks
    outer_blocks: Blocks
    tables: dict = field(default_factory=dict)
    averages: dict = field(default_factory=dict)
    initialized: bool = False
    updates: int = 0

    @property
    def float_count(self) -> int:
        return sum(t.size for t in self.tables.values())

    def snapshot(self) -> dict:
        return {k: t.copy() for k, t in self.tables.items()}


def saba_init(state0: JointState, oracle: BilevelOracle, batch: BatchSpec = BatchSpec(),
              zeros: bool = False, counter: CallCounter | None = None) -> SabaMemory:
    """Fill every slot by evaluating each block at ``state0`` (or with zeros)."""
    dims = oracle.dims
    inner = batch.inner_blocks(dims)
    outer = batch.outer_blocks(dims)
    mem = SabaMemory(inner, outer)
    mem.tables = {
        "g_grad": np.zeros((len(inner), dims.p)),
        "g_hvp": np.zeros((len(inner), dims.p)),
        "g_cross": np.zeros((len(inner), dims.d)),
        "f_in": np.zeros((len(outer), dims.p)),
        "f_out": np.zeros((len(outer), dims.d)),
    }
    if not zeros:
        state0.check(dims)
        for i in range(len(inner)):
            g, hv, cv, bi = _inner_block(oracle, state0, inner, i)
            mem.tables["g_grad"][i] = g
            mem.tables["g_hvp"][i] = hv
            mem.tables["g_cross"][i] = cv
            if counter is not None:
                counter.add_inner(bi)
        for j in range(len(outer)):
            fi, fo, bj = _outer_block(oracle, state0, outer, j)
            mem.tables["f_in"][j] = fi
            mem.tables["f_out"][j] = fo
            if counter is not None:
                counter.add_outer(bj)
    mem.averages = {k: t.mean(axis=0) for k, t in mem.tables.items()}
    mem.initialized = True
    return mem


def saba_directions(state: JointState, draw: IndexDraw, memory: SabaMemory,
                    oracle: BilevelOracle, counter: CallCounter | None = None):
    """SAGA-style estimates ``phi_i(now) - phi_i(stored) + mean(stored)``.

    Writes the fresh evaluations into slot ``i`` (inner tables) and ``j``
    (outer tables) and updates the running means in O(1).  Returns the
    direction triple and the (mutated) memory.
    """
    if not memory.initialized:
        raise RuntimeError("SABA memory used before saba_init")
    i, j = draw.i, draw.j
    g, hv, cv, bi = _inner_block(oracle, state, memory.inner_blocks, i)
    fi, fo, bj = _outer_block(oracle, state, memory.outer_blocks, j)
    if counter is not None:
        counter.add_inner(bi)
        counter.add_outer(bj)
    T, A = memory.tables, memory.averages
    new = {"g_grad": g, "g_hvp": hv, "g_cross": cv, "f_in": fi, "f_out": fo}
    slot = {"g_grad": i, "g_hvp": i, "g_cross": i, "f_in": j, "f_out": j}
    est = {}
    for name, value in new.items():
        k = slot[name]
        diff = value - T[name][k]
        est[name] = diff + A[name]
        A[name] = A[name] + diff / T[name].shape[0]
        T[name][k] = value
    memory.updates += 1
    triple = DirectionTriple(
        est["g_grad"],
        est["g_hvp"] + est["f_in"],
        est["g_cross"] + est["f_out"],
    )
    return triple, memory


def recompute_averages(memory: SabaMemory, overwrite: bool = False) -> float:
    """Max absolute gap between each running mean and its table's exact mean."""
    if not memory.initialized:
        raise RuntimeError("SABA memory used before saba_init")
    drift = 0.0
    for name, table in memory.tables.items():
        exact = table.mean(axis=0)
        drift = max(drift, float(np.max(np.abs(exact - memory.averages[name]), initial=0.0)))
        if overwrite:
            memory.averages[name] = exact
    return drift
