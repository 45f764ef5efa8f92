"""Hyperparameter selection for ridge regression (scalar penalty)."""
from __future__ import annotations

import numpy as np

from ..oracle import BilevelOracle, ProblemDims, hash_arrays
from ..rng import generator
from ._linalg import as_design, matvec, rmatvec

N_SAMPLES = 1000
N_TRAIN = 750
N_FEATURES = 10


class RidgeHyperProblem(BilevelOracle):
    """``G_i(theta, lam) = 1/2 (x_i'theta - y_i)^2 + lam/2 |theta|^2`` on the
    training pairs and ``F_j = 1/2 (x_j'theta - y_j)^2`` on validation pairs.

    The outer variable is the raw penalty ``lam`` (a length-1 vector); ``G`` is
    strongly convex only while ``lam > -lambda_min(X'X / n)``.
    """

    def __init__(self, X_train, y_train, X_val, y_val):
        self.X_train = as_design(X_train)
        self.y_train = np.asarray(y_train, dtype=float)
        self.X_val = as_design(X_val)
        self.y_val = np.asarray(y_val, dtype=float)
        n, p = self.X_train.shape
        self.dims = ProblemDims(n=n, m=self.X_val.shape[0], p=p, d=1)
        self._gram_min = None

    def _g_resid(self, sl, z):
        return matvec(self.X_train[sl], z) - self.y_train[sl]

    def _g_value(self, sl, z, x):
        r = self._g_resid(sl, z)
        return 0.5 * np.mean(r * r) + 0.5 * x[0] * (z @ z)

    def _g_grad(self, sl, z, x):
        D = self.X_train[sl]
        r = matvec(D, z) - self.y_train[sl]
        return rmatvec(D, r) / r.shape[0] + x[0] * z

    def _g_grad_out(self, sl, z, x):
        return np.array([0.5 * (z @ z)])

    def _g_hvp(self, sl, z, x, v):
        D = self.X_train[sl]
        return rmatvec(D, matvec(D, v)) / D.shape[0] + x[0] * v

    def _g_cross(self, sl, z, x, v):
        return np.array([z @ v])

    def _g_fused(self, sl, z, x, v):
        D = self.X_train[sl]
        b = D.shape[0]
        r = matvec(D, z) - self.y_train[sl]
        grad = rmatvec(D, r) / b + x[0] * z
        hvp = rmatvec(D, matvec(D, v)) / b + x[0] * v
        return grad, hvp, np.array([z @ v])

    def _f_value(self, sl, z, x):
        r = matvec(self.X_val[sl], z) - self.y_val[sl]
        return 0.5 * np.mean(r * r)

    def _f_grad_in(self, sl, z, x):
        D = self.X_val[sl]
        r = matvec(D, z) - self.y_val[sl]
        return rmatvec(D, r) / r.shape[0]

    def _f_grad_out(self, sl, z, x):
        return np.zeros(1)

    def mu_g(self, x) -> float:
        if self._gram_min is None:
            X = self.X_train
            gram = (X.T @ X) / X.shape[0]
            gram = gram.toarray() if hasattr(gram, "toarray") else gram
            self._gram_min = float(np.linalg.eigvalsh(gram)[0])
        return self._gram_min + float(x[0])

    def outer_bounds(self):
        # keep mu_G >= 10% of the smallest eigenvalue of X'X/n
        return [(-0.9 * self.mu_g(np.zeros(1)), None)]

    def fingerprint(self) -> str:
        return hash_arrays("ridge", self.X_train, self.y_train, self.X_val, self.y_val)

    def ridge_solution(self, lam: float) -> np.ndarray:
        """Normal equations ``(X'X/n + lam I) theta = X'y/n``."""
        X = self.X_train
        n, p = X.shape
        gram = X.T @ X
        gram = gram.toarray() if hasattr(gram, "toarray") else gram
        return np.linalg.solve(gram / n + lam * np.eye(p), rmatvec(X, self.y_train) / n)


def make_toy_ridge(seed) -> RidgeHyperProblem:
    """Toy ridge instance: 1000 Gaussian samples in dimension 10, targets
    ``y = (X * W) beta + eps`` with ``W_ij = 1 + u_j v_ij``, split 750/250."""
    rng = generator(seed)
    X = rng.standard_normal((N_SAMPLES, N_FEATURES))
    beta = rng.standard_normal(N_FEATURES)
    v = rng.uniform(0.0, 1.0, size=(N_SAMPLES, N_FEATURES))
    half = N_FEATURES // 2
    u = np.concatenate([rng.uniform(0.0, 1.0, size=half),
                        rng.uniform(0.0, 10.0, size=N_FEATURES - half)])
    W = 1.0 + u[None, :] * v
    eps = rng.normal(0.0, np.sqrt(0.01), size=N_SAMPLES)
    y = (X * W) @ beta + eps
    return RidgeHyperProblem(X[:N_TRAIN], y[:N_TRAIN], X[N_TRAIN:], y[N_TRAIN:])
