"""Data hyper-cleaning: learn one weight per training sample.

Inner variable ``theta`` is a ``C x p`` matrix of multinomial logistic
regression weights, flattened row-major.  Outer variable ``lam`` has one entry
per training sample and the sample weight is ``sigmoid(lam_i)``:

    G_i(theta, lam) = sigmoid(lam_i) * ce(theta d_i, y_i) + C_r |theta|^2
    F_j(theta, lam) = ce(theta d_j, y_j)          (validation, no lam)
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_softmax

from ..oracle import BilevelOracle, ProblemDims, hash_arrays
from ._linalg import as_design
from .data import corrupt_labels, make_multiclass

# Sizes used for the full MNIST experiment.
MNIST_DIMS = {"n_train": 20000, "n_val": 5000, "n_test": 10000, "num_classes": 10, "p": 784}
DEFAULT_CR = 0.2


@dataclass
class LabeledSet:
    X: np.ndarray
    y: np.ndarray

    def __len__(self):
        return self.X.shape[0]


def _sigmoid_prime(t):
    s = expit(t)
    return s * (1.0 - s)


class HyperCleanProblem(BilevelOracle):
    def __init__(self, X_train, y_train, X_val, y_val, X_test=None, y_test=None,
                 c_r: float = DEFAULT_CR, num_classes: int | None = None, corrupted=None):
        if c_r < 0:
            raise ValueError(f"c_r must be non-negative, got {c_r}")
        self.X_train = as_design(X_train)
        self.y_train = np.asarray(y_train, dtype=np.int64)
        self.X_val = as_design(X_val)
        self.y_val = np.asarray(y_val, dtype=np.int64)
        self.X_test = None if X_test is None else as_design(X_test)
        self.y_test = None if y_test is None else np.asarray(y_test, dtype=np.int64)
        if num_classes is None:
            num_classes = int(max(self.y_train.max(), self.y_val.max())) + 1
        self.num_classes = num_classes
        self.c_r = float(c_r)
        n, p = self.X_train.shape
        self.n_features = p
        self.corrupted = (np.zeros(n, dtype=bool) if corrupted is None
                          else np.asarray(corrupted, dtype=bool))
        self.dims = ProblemDims(n=n, m=self.X_val.shape[0], p=num_classes * p, d=n)
        self._onehot_train = np.eye(num_classes)[self.y_train]
        self._onehot_val = np.eye(num_classes)[self.y_val]

    def _theta(self, z):
        return z.reshape(self.num_classes, self.n_features)

    def _logits(self, X, theta):
        return np.asarray(X @ theta.T)

    def _back(self, X, W):
        """``sum_i W_i d_i'`` as a flat ``C*p`` vector."""
        return np.asarray(X.T @ W).T.ravel()

    # -- inner ------------------------------------------------------------
    def _g_value(self, sl, z, x):
        theta = self._theta(z)
        logp = log_softmax(self._logits(self.X_train[sl], theta), axis=1)
        ce = -np.take_along_axis(logp, self.y_train[sl, None], axis=1)[:, 0]
        return np.mean(expit(x[sl]) * ce) + self.c_r * (z @ z)

    def _g_grad(self, sl, z, x):
        X = self.X_train[sl]
        logp = log_softmax(self._logits(X, self._theta(z)), axis=1)
        R = (np.exp(logp) - self._onehot_train[sl]) * expit(x[sl])[:, None]
        return self._back(X, R) / X.shape[0] + 2.0 * self.c_r * z

    def _g_grad_out(self, sl, z, x):
        logp = log_softmax(self._logits(self.X_train[sl], self._theta(z)), axis=1)
        ce = -np.take_along_axis(logp, self.y_train[sl, None], axis=1)[:, 0]
        out = np.zeros(self.dims.d)
        out[sl] = _sigmoid_prime(x[sl]) * ce / (sl.stop - sl.start)
        return out

    def _g_hvp(self, sl, z, x, v):
        return self._g_fused(sl, z, x, v)[1]

    def _g_cross(self, sl, z, x, v):
        return self._g_fused(sl, z, x, v)[2]

    def _g_fused(self, sl, z, x, v):
        X = self.X_train[sl]
        b = X.shape[0]
        s = np.exp(log_softmax(self._logits(X, self._theta(z)), axis=1))
        u = self._logits(X, self._theta(v))
        resid = s - self._onehot_train[sl]
        w = expit(x[sl])[:, None]
        grad = self._back(X, resid * w) / b + 2.0 * self.c_r * z
        curv = s * u - s * np.sum(s * u, axis=1, keepdims=True)
        hvp = self._back(X, curv * w) / b + 2.0 * self.c_r * v
        cross = np.zeros(self.dims.d)
        cross[sl] = _sigmoid_prime(x[sl]) * np.sum(resid * u, axis=1) / b
        return grad, hvp, cross

    # -- outer ------------------------------------------------------------
    def _f_value(self, sl, z, x):
        logp = log_softmax(self._logits(self.X_val[sl], self._theta(z)), axis=1)
        return -np.mean(np.take_along_axis(logp, self.y_val[sl, None], axis=1))

    def _f_grad_in(self, sl, z, x):
        X = self.X_val[sl]
        s = np.exp(log_softmax(self._logits(X, self._theta(z)), axis=1))
        return self._back(X, s - self._onehot_val[sl]) / X.shape[0]

    def _f_grad_out(self, sl, z, x):
        return np.zeros(self.dims.d)

    def mu_g(self, x=None) -> float:
        return 2.0 * self.c_r

    def fingerprint(self) -> str:
        return hash_arrays("hyperclean", self.X_train, self.y_train, self.X_val, self.y_val,
                           self.c_r, self.num_classes)

    @property
    def has_test(self) -> bool:
        return self.X_test is not None

    def predict(self, z, X):
        return np.argmax(self._logits(X, self._theta(z)), axis=1)

    def test_error(self, z) -> float:
        if not self.has_test:
            raise NotImplementedError("no test set attached")
        return float(np.mean(self.predict(z, self.X_test) != self.y_test))

    def sample_weights(self, x) -> np.ndarray:
        return expit(x)


def make_hyperclean(train: LabeledSet, val: LabeledSet, test: LabeledSet | None,
                    p_corrupt: float, c_r: float = DEFAULT_CR, seed=0,
                    num_classes: int | None = None) -> HyperCleanProblem:
    """Corrupt the training labels (validation and test stay clean) and build
    the problem."""
    if not 0.0 <= p_corrupt <= 1.0:
        raise ValueError(f"p_corrupt must be in [0, 1], got {p_corrupt}")
    if c_r < 0:
        raise ValueError(f"c_r must be non-negative, got {c_r}")
    if num_classes is None:
        labels = [train.y, val.y] + ([test.y] if test is not None else [])
        num_classes = int(max(np.max(y) for y in labels)) + 1
    y_train, mask = corrupt_labels(train.y, p_corrupt, num_classes, seed)
    test_args = (None, None) if test is None else (test.X, test.y)
    return HyperCleanProblem(train.X, y_train, val.X, val.y, *test_args, c_r=c_r,
                             num_classes=num_classes, corrupted=mask)


def make_synthetic_hyperclean(n_train=2000, n_val=500, n_test=1000, n_features=20,
                              num_classes=10, p_corrupt=0.5, c_r=DEFAULT_CR, seed=0,
                              separation=1.0) -> HyperCleanProblem:
    """Desk-scale stand-in for MNIST: Gaussian class clusters."""
    total = n_train + n_val + n_test
    X, y = make_multiclass(total, n_features, num_classes, seed=[int(seed), 0],
                           separation=separation)
    split = np.cumsum([n_train, n_val])
    train = LabeledSet(X[:split[0]], y[:split[0]])
    val = LabeledSet(X[split[0]:split[1]], y[split[0]:split[1]])
    test = LabeledSet(X[split[1]:], y[split[1]:])
    return make_hyperclean(train, val, test, p_corrupt, c_r, seed=[int(seed), 1],
                           num_classes=num_classes)
