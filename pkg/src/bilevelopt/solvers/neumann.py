"""Neumann-series estimates of ``[hess_zz G(z, x)]^{-1} g``.

Both rely on ``H^{-1} = eta * sum_k (I - eta H)^k`` for ``eta * |H| < 1``.
Each factor uses the Hessian of one uniformly drawn block (``batch_size``
samples) or, with ``batch_size=None``, the full-batch Hessian.
"""
from __future__ import annotations

import numpy as np

from ..directions import CallCounter
from ..oracle import BilevelOracle, Blocks
from ..rng import generator


def _hessian_sampler(problem: BilevelOracle, z, x, batch_size, rng, counter):
    n = problem.dims.n
    if batch_size is None:
        def hvp(v):
            if counter is not None:
                counter.hvp += n
            return problem.g_hvp(z, x, v)
        return hvp
    blocks = Blocks(n, min(batch_size, n))

    def hvp(v):
        k = int(rng.integers(len(blocks)))
        sl = blocks[k]
        if counter is not None:
            counter.hvp += sl.stop - sl.start
        out = problem.g_hvp(z, x, v, block=sl)
        w = blocks.weight(k)
        return out if w == 1.0 else w * out
    return hvp


def hia(problem: BilevelOracle, z, x, g, b: int, eta: float, seed=None, batch_size=1,
        counter: CallCounter | None = None) -> np.ndarray:
    """Randomly truncated Neumann estimate: draw ``q`` uniformly in
    ``{0, ..., b-1}``, apply ``q`` sampled factors ``(I - eta H_i)`` to ``g`` and
    return ``b * eta`` times the result."""
    if b < 1:
        raise ValueError("b must be >= 1")
    rng = generator(seed)
    hvp = _hessian_sampler(problem, z, x, batch_size, rng, counter)
    q = int(rng.integers(b))
    v = np.array(g, dtype=float)
    for _ in range(q):
        v = v - eta * hvp(v)
    return b * eta * v


def shia(problem: BilevelOracle, z, x, g, b: int, eta: float, seed=None, batch_size=1,
         counter: CallCounter | None = None) -> np.ndarray:
    """Summed Neumann estimate ``eta * sum_{k=0}^{b} v_k`` with ``v_0 = g`` and
    ``v_{k+1} = (I - eta H_{i_k}) v_k``."""
    if b < 0:
        raise ValueError("b must be >= 0")
    rng = generator(seed)
    hvp = _hessian_sampler(problem, z, x, batch_size, rng, counter)
    v = np.array(g, dtype=float)
    s = v.copy()
    for _ in range(b):
        v = v - eta * hvp(v)
        s = s + v
    return eta * s
