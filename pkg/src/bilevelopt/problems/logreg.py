"""Per-feature penalized logistic regression: one hyperparameter per feature."""
from __future__ import annotations

import numpy as np
from scipy.special import expit

from ..oracle import BilevelOracle, ProblemDims, hash_arrays
from ._linalg import as_design, matvec, rmatvec
from .data import SparseDataset, make_binary_classification

# Full-scale IJCNN1 sizes (train, validation, features), kept for config checks.
IJCNN1_DIMS = {"n": 49990, "m": 91701, "p": 22}


def _phi(u):
    return np.logaddexp(0.0, -u)


def _dphi(u):
    return -expit(-u)


def _d2phi(u):
    s = expit(u)
    return s * (1.0 - s)


def _pm1(labels):
    labels = np.asarray(labels)
    values = set(np.unique(labels).tolist())
    if not values <= {-1, 1}:
        if values <= {0, 1}:
            return np.where(labels == 1, 1.0, -1.0)
        raise ValueError(f"labels must be binary, got values {sorted(values)[:5]}")
    return labels.astype(float)


class LogRegHyperProblem(BilevelOracle):
    """``G_i = phi(y_i <d_i, theta>) + 1/2 sum_k exp(lam_k) theta_k^2`` and
    ``F_j = phi(y_j <d_j, theta>)`` with ``phi(u) = log(1 + exp(-u))``."""

    def __init__(self, D_train, y_train, D_val, y_val, D_test=None, y_test=None):
        self.D_train = as_design(D_train)
        self.y_train = _pm1(y_train)
        self.D_val = as_design(D_val)
        self.y_val = _pm1(y_val)
        self.D_test = None if D_test is None else as_design(D_test)
        self.y_test = None if y_test is None else _pm1(y_test)
        n, p = self.D_train.shape
        if self.D_val.shape[1] != p:
            raise ValueError("train and validation feature counts differ")
        self.dims = ProblemDims(n=n, m=self.D_val.shape[0], p=p, d=p)

    def _margins(self, sl, z):
        return self.y_train[sl] * matvec(self.D_train[sl], z)

    def _g_value(self, sl, z, x):
        return np.mean(_phi(self._margins(sl, z))) + 0.5 * np.exp(x) @ (z * z)

    def _g_grad(self, sl, z, x):
        D = self.D_train[sl]
        y = self.y_train[sl]
        u = y * matvec(D, z)
        return rmatvec(D, _dphi(u) * y) / D.shape[0] + np.exp(x) * z

    def _g_grad_out(self, sl, z, x):
        return 0.5 * np.exp(x) * z * z

    def _g_hvp(self, sl, z, x, v):
        D = self.D_train[sl]
        u = self.y_train[sl] * matvec(D, z)
        return rmatvec(D, _d2phi(u) * matvec(D, v)) / D.shape[0] + np.exp(x) * v

    def _g_cross(self, sl, z, x, v):
        return np.exp(x) * z * v

    def _g_fused(self, sl, z, x, v):
        D = self.D_train[sl]
        y = self.y_train[sl]
        b = D.shape[0]
        u = y * matvec(D, z)
        ex = np.exp(x)
        grad = rmatvec(D, _dphi(u) * y) / b + ex * z
        hvp = rmatvec(D, _d2phi(u) * matvec(D, v)) / b + ex * v
        return grad, hvp, ex * z * v

    def _f_value(self, sl, z, x):
        return np.mean(_phi(self.y_val[sl] * matvec(self.D_val[sl], z)))

    def _f_grad_in(self, sl, z, x):
        D = self.D_val[sl]
        y = self.y_val[sl]
        return rmatvec(D, _dphi(y * matvec(D, z)) * y) / D.shape[0]

    def _f_grad_out(self, sl, z, x):
        return np.zeros(self.dims.d)

    def mu_g(self, x) -> float:
        return float(np.exp(np.min(x)))

    def fingerprint(self) -> str:
        return hash_arrays("logreg", self.D_train, self.y_train, self.D_val, self.y_val)

    @property
    def has_test(self) -> bool:
        return self.D_test is not None

    def test_error(self, z) -> float:
        if not self.has_test:
            raise NotImplementedError("no test set attached")
        pred = np.where(matvec(self.D_test, z) >= 0, 1.0, -1.0)
        return float(np.mean(pred != self.y_test))


def make_logreg_hyper(data: SparseDataset, data_val: SparseDataset,
                      data_test: SparseDataset | None = None) -> LogRegHyperProblem:
    """Build the problem from libsvm-style datasets (labels +-1 or 0/1)."""
    p = max(data.rows.shape[1], data_val.rows.shape[1])
    Dt = data.rows if data.rows.shape[1] == p else _pad(data.rows, p)
    Dv = data_val.rows if data_val.rows.shape[1] == p else _pad(data_val.rows, p)
    args = (Dt, data.labels, Dv, data_val.labels)
    if data_test is not None:
        De = data_test.rows if data_test.rows.shape[1] == p else _pad(data_test.rows, p)
        return LogRegHyperProblem(*args, De, data_test.labels)
    return LogRegHyperProblem(*args)


def _pad(rows, p):
    rows = rows.tocsr().copy()
    rows.resize((rows.shape[0], p))
    return rows


def make_synthetic_logreg(n: int = 500, m: int = 500, p: int = 22, seed=0,
                          n_test: int = 0) -> LogRegHyperProblem:
    """Desk-scale stand-in for IJCNN1: dense Gaussian features, same ``p``."""
    X, y = make_binary_classification(n + m + n_test, p, seed)
    test = (X[n + m:], y[n + m:]) if n_test else (None, None)
    return LogRegHyperProblem(X[:n], y[:n], X[n:n + m], y[n:n + m], *test)
