"""Sampled derivative interface shared by every bilevel problem.

A problem is a pair of finite sums

    G(z, x) = 1/n sum_i G_i(z, x),    F(z, x) = 1/m sum_j F_j(z, x)

and exposes, for any contiguous block of sample indices, the block mean of the
per-sample quantities the joint dynamics need: inner/outer gradients,
Hessian-vector products and cross-derivative products.  Subclasses implement the
block-level methods; the single-index helpers and :func:`batch_mean` are built on
top of them.
"""
from __future__ import annotations

import hashlib

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ProblemDims:
    """Sizes of a bilevel problem: ``n`` inner samples, ``m`` outer samples,
    inner dimension ``p`` and outer dimension ``d``."""

    n: int
    m: int
    p: int
    d: int

    def __post_init__(self):
        for name in ("n", "m", "p", "d"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")


@dataclass
class JointState:
    """The joint iterate: inner variable ``z``, adjoint ``v`` and outer ``x``."""

    z: np.ndarray
    v: np.ndarray
    x: np.ndarray

    def copy(self) -> "JointState":
        return JointState(self.z.copy(), self.v.copy(), self.x.copy())

    def check(self, dims: ProblemDims) -> None:
        if self.z.shape != (dims.p,) or self.v.shape != (dims.p,):
            raise ValueError(
                f"z and v must have shape ({dims.p},), got {self.z.shape} and {self.v.shape}"
            )
        if self.x.shape != (dims.d,):
            raise ValueError(f"x must have shape ({dims.d},), got {self.x.shape}")
        if not self.is_finite():
            raise ValueError("state has non-finite entries")

    def is_finite(self) -> bool:
        return bool(
            np.isfinite(self.z).all() and np.isfinite(self.v).all() and np.isfinite(self.x).all()
        )

    def max_norm(self) -> float:
        return max(np.linalg.norm(self.z), np.linalg.norm(self.v), np.linalg.norm(self.x))

    @classmethod
    def zeros(cls, dims: ProblemDims) -> "JointState":
        return cls(np.zeros(dims.p), np.zeros(dims.p), np.zeros(dims.d))


class Blocks:
    """Contiguous partition of ``range(size)`` into blocks of ``batch_size``.

    Block ``k`` covers ``[k * batch_size, min((k + 1) * batch_size, size))``;
    only the last block can be shorter.
    """

    def __init__(self, size: int, batch_size: int):
        if not 1 <= batch_size <= size:
            raise ValueError(f"batch size must be in [1, {size}], got {batch_size}")
        self.size = size
        self.batch_size = batch_size
        self.count = math.ceil(size / batch_size)

    def __len__(self) -> int:
        return self.count

    def __getitem__(self, k: int) -> slice:
        if not 0 <= k < self.count:
            raise IndexError(f"block index {k} out of range [0, {self.count})")
        return slice(k * self.batch_size, min((k + 1) * self.batch_size, self.size))

    def __iter__(self):
        return (self[k] for k in range(self.count))

    def weight(self, k: int) -> float:
        """Factor turning the mean of block ``k`` into an unbiased estimate of the
        full mean when blocks are drawn uniformly (1.0 unless the block is ragged)."""
        sl = self[k]
        return self.count * (sl.stop - sl.start) / self.size


@dataclass(frozen=True)
class BatchSpec:
    """Inner and outer mini-batch sizes (contiguous blocks)."""

    batch_size_inner: int = 1
    batch_size_outer: int = 1

    def inner_blocks(self, dims: ProblemDims) -> Blocks:
        return Blocks(dims.n, min(self.batch_size_inner, dims.n))

    def outer_blocks(self, dims: ProblemDims) -> Blocks:
        return Blocks(dims.m, min(self.batch_size_outer, dims.m))


def _resolve(block, size: int) -> slice:
    if block is None:
        return slice(0, size)
    if isinstance(block, tuple):
        block = slice(*block)
    start, stop, step = block.indices(size)
    if step != 1:
        raise ValueError("blocks must be contiguous")
    if block.start is not None and not 0 <= block.start <= size:
        raise IndexError(f"block start {block.start} out of range for {size} samples")
    if block.stop is not None and block.stop > size:
        raise IndexError(f"block stop {block.stop} out of range for {size} samples")
    if stop <= start:
        raise ValueError("empty block")
    return slice(start, stop)


class BilevelOracle:
    """Base class for finite-sum bilevel problems.

    Every block-level method takes ``block`` (a ``slice``, a ``(start, stop)``
    tuple, or ``None`` for the full range) and returns the *mean* of the
    per-sample quantity over that block.  Subclasses override the underscore
    methods, which receive an already validated ``slice``.
    """

    dims: ProblemDims

    # -- subclass hooks -------------------------------------------------------
    def _g_value(self, sl, z, x):
        raise NotImplementedError

    def _g_grad(self, sl, z, x):
        raise NotImplementedError

    def _g_grad_out(self, sl, z, x):
        raise NotImplementedError

    def _g_hvp(self, sl, z, x, v):
        raise NotImplementedError

    def _g_cross(self, sl, z, x, v):
        raise NotImplementedError

    def _g_fused(self, sl, z, x, v):
        return self._g_grad(sl, z, x), self._g_hvp(sl, z, x, v), self._g_cross(sl, z, x, v)

    def _f_value(self, sl, z, x):
        raise NotImplementedError

    def _f_grad_in(self, sl, z, x):
        raise NotImplementedError

    def _f_grad_out(self, sl, z, x):
        raise NotImplementedError

    def _f_fused(self, sl, z, x):
        return self._f_grad_in(sl, z, x), self._f_grad_out(sl, z, x)

    # -- block-level API ------------------------------------------------------
    def g_value(self, z, x, block=None) -> float:
        return float(self._g_value(_resolve(block, self.dims.n), z, x))

    def g_grad(self, z, x, block=None) -> np.ndarray:
        return self._g_grad(_resolve(block, self.dims.n), z, x)

    def g_grad_out(self, z, x, block=None) -> np.ndarray:
        return self._g_grad_out(_resolve(block, self.dims.n), z, x)

    def g_hvp(self, z, x, v, block=None) -> np.ndarray:
        return self._g_hvp(_resolve(block, self.dims.n), z, x, v)

    def g_cross(self, z, x, v, block=None) -> np.ndarray:
        return self._g_cross(_resolve(block, self.dims.n), z, x, v)

    def g_fused(self, z, x, v, block=None):
        """``(grad_z G, hess_zz G @ v, hess_xz G @ v)`` sharing per-sample work."""
        return self._g_fused(_resolve(block, self.dims.n), z, x, v)

    def f_value(self, z, x, block=None) -> float:
        return float(self._f_value(_resolve(block, self.dims.m), z, x))

    def f_grad_in(self, z, x, block=None) -> np.ndarray:
        return self._f_grad_in(_resolve(block, self.dims.m), z, x)

    def f_grad_out(self, z, x, block=None) -> np.ndarray:
        return self._f_grad_out(_resolve(block, self.dims.m), z, x)

    def f_fused(self, z, x, block=None):
        return self._f_fused(_resolve(block, self.dims.m), z, x)

    # -- single-sample API ----------------------------------------------------
    def _index(self, i, size):
        i = int(i)
        if not 0 <= i < size:
            raise IndexError(f"sample index {i} out of range [0, {size})")
        return slice(i, i + 1)

    def value_g(self, i, z, x) -> float:
        return float(self._g_value(self._index(i, self.dims.n), z, x))

    def grad_g_in(self, i, z, x) -> np.ndarray:
        return self._g_grad(self._index(i, self.dims.n), z, x)

    def grad_g_out(self, i, z, x) -> np.ndarray:
        return self._g_grad_out(self._index(i, self.dims.n), z, x)

    def hvp_g(self, i, z, x, v) -> np.ndarray:
        return self._g_hvp(self._index(i, self.dims.n), z, x, v)

    def cross_g(self, i, z, x, v) -> np.ndarray:
        return self._g_cross(self._index(i, self.dims.n), z, x, v)

    def value_f(self, j, z, x) -> float:
        return float(self._f_value(self._index(j, self.dims.m), z, x))

    def grad_f_in(self, j, z, x) -> np.ndarray:
        return self._f_grad_in(self._index(j, self.dims.m), z, x)

    def grad_f_out(self, j, z, x) -> np.ndarray:
        return self._f_grad_out(self._index(j, self.dims.m), z, x)

    # -- problem metadata -----------------------------------------------------
    def mu_g(self, x) -> float:
        """Lower bound on the strong convexity constant of ``G(., x)``."""
        raise NotImplementedError

    def fingerprint(self) -> str:
        """Stable hash of the problem data, used to key cached optima."""
        raise NotImplementedError

    def outer_bounds(self):
        """Per-coordinate ``(low, high)`` bounds on ``x`` outside which ``G`` stops
        being strongly convex, or ``None`` when every ``x`` is admissible."""
        return None


SAMPLED_OPS = {
    "grad_g_in": ("g_grad", "n"),
    "hvp_g": ("g_hvp", "n"),
    "cross_g": ("g_cross", "n"),
    "grad_f_in": ("f_grad_in", "m"),
    "grad_f_out": ("f_grad_out", "m"),
}


def batch_mean(oracle: BilevelOracle, op: str, block, *args) -> np.ndarray:
    """Mean of one of the five sampled operations over a contiguous block.

    ``op`` is one of ``grad_g_in``, ``hvp_g``, ``cross_g``, ``grad_f_in`` or
    ``grad_f_out``; ``args`` are ``(z, x)`` or ``(z, x, v)`` as for the
    single-sample call.
    """
    try:
        method, _ = SAMPLED_OPS[op]
    except KeyError:
        raise ValueError(f"unknown sampled op {op!r}") from None
    return getattr(oracle, method)(*args, block=block)


def hash_arrays(*parts) -> str:
    """sha256 over a sequence of arrays / scalars / strings."""
    h = hashlib.sha256()
    for part in parts:
        if isinstance(part, np.ndarray):
            a = np.ascontiguousarray(part)
            h.update(str(a.dtype).encode())
            h.update(str(a.shape).encode())
            h.update(a.tobytes())
        elif hasattr(part, "tocsr"):
            a = part.tocsr()
            for arr in (a.indptr, a.indices, a.data):
                h.update(np.ascontiguousarray(arr).tobytes())
            h.update(str(a.shape).encode())
        else:
            h.update(repr(part).encode())
    return h.hexdigest()
