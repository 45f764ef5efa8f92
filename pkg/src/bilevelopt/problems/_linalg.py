"""Row-block products that work for dense arrays and CSR matrices alike."""
import numpy as np
from scipy import sparse


def as_design(X):
    if sparse.issparse(X):
        return sparse.csr_matrix(X, dtype=float)
    return np.ascontiguousarray(X, dtype=float)


def rows(X, sl):
    return X[sl]


def matvec(D, w):
    """``D @ w`` as a dense array."""
    out = D @ w
    return np.asarray(out)


def rmatvec(D, r):
    """``D' @ r`` as a dense array."""
    out = D.T @ r
    return np.asarray(out)
