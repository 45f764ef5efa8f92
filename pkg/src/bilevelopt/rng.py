"""Seeded random streams.

All randomness flows from a single integer seed through ``numpy``'s
``SeedSequence`` and the PCG64 bit generator, both of which produce identical
streams on every platform.  A run seed is split into named child streams so
that, e.g., inner index draws do not shift when the outer sampling changes:

    inner    block index of the inner sum (G)
    outer    block index of the outer sum (F)
    neumann  sample indices and truncation levels of HIA / SHIA
    init     random initial points

Stream ``k`` in :data:`STREAMS` is ``SeedSequence(seed).spawn(len(STREAMS))[k]``.
"""
from __future__ import annotations

import numpy as np

STREAMS = ("inner", "outer", "neumann", "init")


def make_streams(seed: int) -> dict[str, np.random.Generator]:
    children = np.random.SeedSequence(int(seed)).spawn(len(STREAMS))
    return {name: np.random.Generator(np.random.PCG64(ss)) for name, ss in zip(STREAMS, children)}


def generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
