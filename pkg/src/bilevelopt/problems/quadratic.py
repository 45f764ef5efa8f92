"""Quadratic bilevel testbed with closed-form ground truth.

Inner samples ``G_i(z, x) = 1/2 z'A_i z + x'B_i z + c_i'z`` and outer samples

    F_j(z, x) = 1/2 z'P_j z + z'R_j x + 1/2 x'S_j x + e_j'z + f_j'x.

The inner solution is affine in ``x`` and the value function is a quadratic, so
``z*``, ``v*``, ``h``, its gradient, Hessian and minimizer are all exact linear
algebra.
"""
from __future__ import annotations

import numpy as np

from ..oracle import BilevelOracle, ProblemDims, hash_arrays
from ..rng import generator


def _block_mean(arr, sl):
    if sl.stop - sl.start == 1:
        return arr[sl.start]
    return arr[sl].mean(axis=0)


class QuadraticBilevel(BilevelOracle):
    def __init__(self, A, B, c, P, R, S, e, f):
        A, B, c, P, R, S, e, f = (np.asarray(a, dtype=float) for a in (A, B, c, P, R, S, e, f))
        n, p, _ = A.shape
        m = P.shape[0]
        d = B.shape[1]
        expected = {
            "A": (A, (n, p, p)), "B": (B, (n, d, p)), "c": (c, (n, p)),
            "P": (P, (m, p, p)), "R": (R, (m, p, d)), "S": (S, (m, d, d)),
            "e": (e, (m, p)), "f": (f, (m, d)),
        }
        for name, (arr, shape) in expected.items():
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.isfinite(arr).all():
                raise ValueError(f"{name} has non-finite entries")
        self.dims = ProblemDims(n=n, m=m, p=p, d=d)
        self.A, self.B, self.c = A, B, c
        self.P, self.R, self.S, self.e, self.f = P, R, S, e, f
        self._full_g = slice(0, n)
        self._full_f = slice(0, m)
        self.Abar, self.Bbar, self.cbar = A.mean(0), B.mean(0), c.mean(0)
        self.Pbar, self.Rbar, self.Sbar = P.mean(0), R.mean(0), S.mean(0)
        self.ebar, self.fbar = e.mean(0), f.mean(0)
        self._mu = float(np.linalg.eigvalsh(self.Abar)[0])
        if self._mu <= 0:
            raise ValueError("mean inner Hessian is not positive definite")
        self._hess_h = None

    def _g_mats(self, sl):
        if sl == self._full_g:
            return self.Abar, self.Bbar, self.cbar
        return _block_mean(self.A, sl), _block_mean(self.B, sl), _block_mean(self.c, sl)

    def _f_mats(self, sl):
        if sl == self._full_f:
            return self.Pbar, self.Rbar, self.Sbar, self.ebar, self.fbar
        return tuple(_block_mean(a, sl) for a in (self.P, self.R, self.S, self.e, self.f))

    # -- inner ------------------------------------------------------------
    def _g_value(self, sl, z, x):
        A, B, c = self._g_mats(sl)
        return 0.5 * z @ A @ z + x @ B @ z + c @ z

    def _g_grad(self, sl, z, x):
        A, B, c = self._g_mats(sl)
        return A @ z + B.T @ x + c

    def _g_grad_out(self, sl, z, x):
        return _block_mean(self.B, sl) @ z

    def _g_hvp(self, sl, z, x, v):
        return _block_mean(self.A, sl) @ v

    def _g_cross(self, sl, z, x, v):
        return _block_mean(self.B, sl) @ v

    def _g_fused(self, sl, z, x, v):
        A, B, c = self._g_mats(sl)
        return A @ z + B.T @ x + c, A @ v, B @ v

    # -- outer ------------------------------------------------------------
    def _f_value(self, sl, z, x):
        P, R, S, e, f = self._f_mats(sl)
        return 0.5 * z @ P @ z + z @ R @ x + 0.5 * x @ S @ x + e @ z + f @ x

    def _f_grad_in(self, sl, z, x):
        P, R, _, e, _ = self._f_mats(sl)
        return P @ z + R @ x + e

    def _f_grad_out(self, sl, z, x):
        _, R, S, _, f = self._f_mats(sl)
        return R.T @ z + S @ x + f

    def _f_fused(self, sl, z, x):
        P, R, S, e, f = self._f_mats(sl)
        return P @ z + R @ x + e, R.T @ z + S @ x + f

    def mu_g(self, x=None) -> float:
        return self._mu

    def fingerprint(self) -> str:
        return hash_arrays("quadratic", self.A, self.B, self.c, self.P, self.R, self.S, self.e, self.f)

    # -- closed-form ground truth -------------------------------------------
    def inner_solution(self, x):
        return -np.linalg.solve(self.Abar, self.Bbar.T @ x + self.cbar)

    def adjoint_solution(self, x, z=None):
        if z is None:
            z = self.inner_solution(x)
        return -np.linalg.solve(self.Abar, self.Pbar @ z + self.Rbar @ x + self.ebar)

    def value(self, x) -> float:
        return self.f_value(self.inner_solution(x), x)

    def hypergradient(self, x):
        z = self.inner_solution(x)
        v = self.adjoint_solution(x, z)
        return self.Rbar.T @ z + self.Sbar @ x + self.fbar + self.Bbar @ v

    def closed_form(self, x):
        """``(h, grad_h, z*, v*)`` at ``x`` by direct solves."""
        z = self.inner_solution(x)
        v = self.adjoint_solution(x, z)
        h = self.f_value(z, x)
        g = self.Rbar.T @ z + self.Sbar @ x + self.fbar + self.Bbar @ v
        return h, g, z, v

    @property
    def hessian_h(self):
        if self._hess_h is None:
            J = -np.linalg.solve(self.Abar, self.Bbar.T)
            H = J.T @ self.Pbar @ J + J.T @ self.Rbar + self.Rbar.T @ J + self.Sbar
            self._hess_h = 0.5 * (H + H.T)
        return self._hess_h

    @property
    def x_star(self):
        return -np.linalg.solve(self.hessian_h, self.hypergradient(np.zeros(self.dims.d)))

    @property
    def h_star(self) -> float:
        return self.value(self.x_star)

    def suboptimality(self, x) -> float:
        """``h(x) - h*`` computed as ``1/2 (x - x*)' H (x - x*)`` (no cancellation)."""
        dx = x - self.x_star
        return float(0.5 * dx @ self.hessian_h @ dx)


def make_quadratic(seed, dims: ProblemDims, mu: float, spread: float = 1.0,
                   coupling: float = 1.0) -> QuadraticBilevel:
    """Random quadratic instance with per-sample strongly convex ``G_i``.

    ``A_i = M_i M_i' + mu I`` with Gaussian ``M_i`` (scaled by ``1/sqrt(p)``), and
    each joint outer Hessian ``[[P_j, R_j], [R_j', S_j]]`` is built the same way,
    so ``h`` is ``mu``-strongly convex.  ``spread`` scales the linear terms,
    which control how heterogeneous the samples are; ``coupling`` scales ``B_i``.
    """
    if mu <= 0:
        raise ValueError(f"mu must be positive, got {mu}")
    rng = generator(seed)
    n, m, p, d = dims.n, dims.m, dims.p, dims.d
    M = rng.standard_normal((n, p, p)) / np.sqrt(p)
    A = M @ M.transpose(0, 2, 1) + mu * np.eye(p)
    B = coupling * rng.standard_normal((n, d, p)) / np.sqrt(p)
    c = spread * rng.standard_normal((n, p))
    N = rng.standard_normal((m, p + d, p + d)) / np.sqrt(p + d)
    Q = N @ N.transpose(0, 2, 1) + mu * np.eye(p + d)
    P, R, S = Q[:, :p, :p], Q[:, :p, p:], Q[:, p:, p:]
    e = spread * rng.standard_normal((m, p))
    f = spread * rng.standard_normal((m, d))
    return QuadraticBilevel(A, B, c, P, R, S, e, f)
