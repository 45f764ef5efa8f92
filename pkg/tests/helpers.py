"""Independent oracles used by the tests: finite differences, a counting proxy
and a stand-alone SAGA loop."""
import numpy as np

from bilevelopt.oracle import BilevelOracle
from bilevelopt.problems import QuadraticBilevel

FD_STEP = 1e-6


def fd_grad(f, x, eps=FD_STEP):
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = eps
        g[k] = (f(x + e) - f(x - e)) / (2 * eps)
    return g


def fd_directional(f, x, u, eps=FD_STEP):
    return (f(x + eps * u) - f(x - eps * u)) / (2 * eps)


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    scale = max(np.linalg.norm(b), 1e-300)
    return np.linalg.norm(a - b) / scale


def identity_quadratic(n=3, m=3, p=2, centers=None):
    """``G_i = 1/2 |z|^2 + <x, z>`` (p = d) and ``F_j = 1/2 |z - c_j|^2``."""
    eye = np.eye(p)
    if centers is None:
        centers = np.arange(m * p, dtype=float).reshape(m, p)
    return QuadraticBilevel(
        A=np.repeat(eye[None], n, 0), B=np.repeat(eye[None], n, 0), c=np.zeros((n, p)),
        P=np.repeat(eye[None], m, 0), R=np.zeros((m, p, p)), S=np.zeros((m, p, p)),
        e=-np.asarray(centers, dtype=float), f=np.zeros((m, p)),
    )


def decoupled_quadratic(n=4, m=4, p=3, d=2):
    """``A_i = I``, ``B_i = 0``, ``F = 1/2 |x|^2`` so ``grad h(x) = x``."""
    return QuadraticBilevel(
        A=np.repeat(np.eye(p)[None], n, 0), B=np.zeros((n, d, p)), c=np.ones((n, p)),
        P=np.zeros((m, p, p)), R=np.zeros((m, p, d)), S=np.repeat(np.eye(d)[None], m, 0),
        e=np.zeros((m, p)), f=np.zeros((m, d)),
    )


class CountingOracle(BilevelOracle):
    """Proxy that tallies per-sample evaluations on its own, for recounts."""

    def __init__(self, inner: BilevelOracle):
        self.inner = inner
        self.dims = inner.dims
        self.grad = 0
        self.hvp = 0

    @staticmethod
    def _size(sl):
        return sl.stop - sl.start

    def _g_value(self, sl, z, x):
        return self.inner._g_value(sl, z, x)

    def _g_grad(self, sl, z, x):
        self.grad += self._size(sl)
        return self.inner._g_grad(sl, z, x)

    def _g_hvp(self, sl, z, x, v):
        self.hvp += self._size(sl)
        return self.inner._g_hvp(sl, z, x, v)

    def _g_cross(self, sl, z, x, v):
        self.hvp += self._size(sl)
        return self.inner._g_cross(sl, z, x, v)

    def _g_fused(self, sl, z, x, v):
        self.grad += self._size(sl)
        self.hvp += 2 * self._size(sl)
        return self.inner._g_fused(sl, z, x, v)

    def _f_value(self, sl, z, x):
        return self.inner._f_value(sl, z, x)

    def _f_grad_in(self, sl, z, x):
        self.grad += self._size(sl)
        return self.inner._f_grad_in(sl, z, x)

    def _f_grad_out(self, sl, z, x):
        self.grad += self._size(sl)
        return self.inner._f_grad_out(sl, z, x)

    def _f_fused(self, sl, z, x):
        self.grad += 2 * self._size(sl)
        return self.inner._f_fused(sl, z, x)

    def mu_g(self, x):
        return self.inner.mu_g(x)


def reference_saga(problem, x, z0, step, n_steps, rng, batch_size=1):
    """Plain SAGA on ``G(., x)`` with a rolling table mean; returns all iterates."""
    n = problem.dims.n
    starts = list(range(0, n, batch_size))
    table = np.stack([problem.g_grad(z0, x, block=slice(s, min(s + batch_size, n)))
                      for s in starts])
    mean = table.mean(axis=0)
    z = z0.copy()
    path = [z.copy()]
    for _ in range(n_steps):
        k = int(rng.integers(len(starts)))
        s = starts[k]
        g = problem.g_grad(z, x, block=slice(s, min(s + batch_size, n)))
        diff = g - table[k]
        direction = diff + mean
        mean = mean + diff / len(starts)
        table[k] = g
        z = z - step * direction
        path.append(z.copy())
    return path
