"""Deterministic ground-truth evaluation of bilevel iterates.

Nothing here samples: the inner problem is solved with L-BFGS followed by
Newton-CG polishing on the full-batch ``G``, and the adjoint system with
conjugate gradient using only Hessian-vector products.
"""
from __future__ import annotations

import hashlib
import json
import platform
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import optimize
from scipy.sparse.linalg import LinearOperator, cg

from .oracle import BilevelOracle, JointState


class ToleranceNotMet(RuntimeError):
    def __init__(self, what: str, residual: float, tol: float):
        super().__init__(f"{what}: residual {residual:.3e} above tolerance {tol:.3e}")
        self.residual = residual
        self.tol = tol


class UnsupportedMetric(RuntimeError):
    pass


class StaleCacheError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExactSolveConfig:
    inner_tol: float = 1e-10
    max_iters: int = 1000
    linear_tol: float = 1e-10

    def __post_init__(self):
        if self.inner_tol <= 0 or self.linear_tol <= 0 or self.max_iters < 1:
            raise ValueError("tolerances must be positive and max_iters >= 1")


DEFAULT_SOLVE = ExactSolveConfig()


def _cg(problem, z, x, rhs, tol, maxiter, x0=None):
    p = problem.dims.p
    op = LinearOperator((p, p), matvec=lambda u: problem.g_hvp(z, x, np.ravel(u)), dtype=float)
    sol, _ = cg(op, rhs, x0=x0, rtol=0.0, atol=tol, maxiter=maxiter)
    return sol


def solve_inner(problem: BilevelOracle, x, cfg: ExactSolveConfig = DEFAULT_SOLVE, z0=None):
    """Minimize the full-batch ``G(., x)`` to ``|grad| <= cfg.inner_tol``."""
    z = np.zeros(problem.dims.p) if z0 is None else np.array(z0, dtype=float)

    def fun(u):
        return problem.g_value(u, x), problem.g_grad(u, x)

    res = optimize.minimize(fun, z, jac=True, method="L-BFGS-B",
                            options={"maxiter": cfg.max_iters, "gtol": cfg.inner_tol,
                                     "ftol": 0.0, "maxcor": 20})
    z = res.x
    grad = problem.g_grad(z, x)
    # Newton polish: L-BFGS stalls around 1e-9 relative, Newton does not.
    for _ in range(50):
        gnorm = np.linalg.norm(grad)
        if gnorm <= cfg.inner_tol:
            return z
        step = _cg(problem, z, x, -grad, tol=0.1 * min(cfg.inner_tol, gnorm * gnorm),
                   maxiter=10 * problem.dims.p)
        z_new = z + step
        grad_new = problem.g_grad(z_new, x)
        t = 1.0
        while np.linalg.norm(grad_new) > gnorm and t > 1e-4:
            t *= 0.5
            z_new = z + t * step
            grad_new = problem.g_grad(z_new, x)
        if np.linalg.norm(grad_new) >= gnorm:
            break
        z, grad = z_new, grad_new
    gnorm = float(np.linalg.norm(grad))
    if gnorm > cfg.inner_tol:
        raise ToleranceNotMet("inner solve", gnorm, cfg.inner_tol)
    return z


def solve_adjoint(problem: BilevelOracle, z_star, x, cfg: ExactSolveConfig = DEFAULT_SOLVE,
                  v0=None):
    """Solve ``hess_zz G(z*, x) v = -grad_z F(z*, x)`` by conjugate gradient."""
    rhs = -problem.f_grad_in(z_star, x)
    v = _cg(problem, z_star, x, rhs, tol=0.5 * cfg.linear_tol,
            maxiter=max(cfg.max_iters, 10 * problem.dims.p), x0=v0)
    resid = float(np.linalg.norm(problem.g_hvp(z_star, x, v) - rhs))
    if resid > cfg.linear_tol:
        raise ToleranceNotMet("adjoint solve", resid, cfg.linear_tol)
    return v


def value_and_grad(problem: BilevelOracle, x, cfg: ExactSolveConfig = DEFAULT_SOLVE,
                   z0=None, v0=None, return_solutions: bool = False):
    """``h(x) = F(z*(x), x)`` and ``grad h(x) = grad_x F + hess_xz G v*``."""
    x = np.asarray(x, dtype=float)
    z = solve_inner(problem, x, cfg, z0)
    v = solve_adjoint(problem, z, x, cfg, v0)
    h = problem.f_value(z, x)
    grad = problem.f_grad_out(z, x) + problem.g_cross(z, x, v)
    if return_solutions:
        return h, grad, z, v
    return h, grad


def delta_diagnostics(problem: BilevelOracle, state: JointState,
                      cfg: ExactSolveConfig = DEFAULT_SOLVE):
    """``(|z - z*(x)|^2, |v - v*(x)|^2)`` for a single trajectory point."""
    _, _, z_star, v_star = value_and_grad(problem, state.x, cfg, return_solutions=True)
    return float(np.sum((state.z - z_star) ** 2)), float(np.sum((state.v - v_star) ** 2))


def test_error(problem: BilevelOracle, theta) -> float:
    """Misclassification rate of the inner model on the problem's test set."""
    if not getattr(problem, "has_test", False):
        raise UnsupportedMetric(f"{type(problem).__name__} has no test set")
    return problem.test_error(theta)


def classification_error(scores, labels) -> float:
    """Fraction of argmax predictions (rows of ``scores``) that miss ``labels``."""
    scores = np.asarray(scores)
    return float(np.mean(np.argmax(scores, axis=1) != np.asarray(labels)))


# -- reference optimum ----------------------------------------------------


@dataclass
class ReferenceOptimum:
    problem_hash: str
    h_star: float
    x_star: list
    tolerance: float
    created: str
    metadata: dict

    def _payload(self) -> dict:
        return {
            "problem_hash": self.problem_hash,
            "h_star": repr(float(self.h_star)),
            "x_star": [repr(float(v)) for v in self.x_star],
            "tolerance": repr(float(self.tolerance)),
        }

    def checksum(self) -> str:
        blob = json.dumps(self._payload(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def save(self, path) -> None:
        doc = dict(self._payload(), created=self.created, metadata=self.metadata,
                   checksum=self.checksum())
        Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True))

    @classmethod
    def load(cls, path, problem: BilevelOracle | None = None) -> "ReferenceOptimum":
        doc = json.loads(Path(path).read_text())
        ref = cls(doc["problem_hash"], float(doc["h_star"]), [float(v) for v in doc["x_star"]],
                  float(doc["tolerance"]), doc.get("created", ""), doc.get("metadata", {}))
        if ref.checksum() != doc.get("checksum"):
            raise StaleCacheError(f"{path}: checksum mismatch (file edited or corrupt)")
        if problem is not None and problem.fingerprint() != ref.problem_hash:
            raise StaleCacheError(f"{path}: cached optimum belongs to a different problem")
        return ref


def compute_reference_optimum(problem: BilevelOracle, x0=None, tol: float = 1e-12,
                              cfg: ExactSolveConfig | None = None,
                              max_iters: int = 10_000) -> ReferenceOptimum:
    """Minimize ``h`` with L-BFGS on exact hypergradients, inside the problem's
    ``outer_bounds`` when it declares any."""
    cfg = cfg or ExactSolveConfig(inner_tol=1e-12, linear_tol=1e-12)
    x0 = np.zeros(problem.dims.d) if x0 is None else np.asarray(x0, dtype=float)
    warm = {"z": None}
    evals = {"n": 0}

    def fun(x):
        h, g, z, _ = value_and_grad(problem, x, cfg, z0=warm["z"], return_solutions=True)
        warm["z"] = z
        evals["n"] += 1
        return h, g

    res = optimize.minimize(fun, x0, jac=True, method="L-BFGS-B", bounds=problem.outer_bounds(),
                            options={"maxiter": max_iters, "gtol": tol, "ftol": 0.0})
    h_star, grad = fun(res.x)
    return ReferenceOptimum(
        problem_hash=problem.fingerprint(),
        h_star=float(h_star),
        x_star=[float(v) for v in res.x],
        tolerance=tol,
        created=time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        metadata={"grad_norm": float(np.linalg.norm(grad)), "evaluations": evals["n"],
                  "message": str(res.message), "python": platform.python_version(),
                  "numpy": np.__version__},
    )


def suboptimality(problem: BilevelOracle, x, reference: ReferenceOptimum | None = None,
                  cfg: ExactSolveConfig = DEFAULT_SOLVE) -> float:
    """``h(x) - h*`` against the closed form or a cached reference optimum."""
    if hasattr(problem, "suboptimality"):
        return problem.suboptimality(np.asarray(x, dtype=float))
    if reference is None:
        raise UnsupportedMetric("no reference optimum registered for this problem")
    if reference.problem_hash != problem.fingerprint():
        raise StaleCacheError("reference optimum belongs to a different problem")
    h, _ = value_and_grad(problem, x, cfg)
    gap = h - reference.h_star
    if gap < -10 * cfg.inner_tol - 10 * reference.tolerance:
        raise StaleCacheError(f"h(x) is {-gap:.3e} below the cached optimum")
    return float(gap)


# -- trajectory evaluation ---------------------------------------------------


class Evaluator:
    """Computes the per-row metrics of a run at a given joint state.

    Uses the problem's closed form when it has one, otherwise exact solves
    warm-started from the previous evaluation.  With ``task_only=True`` only
    the task metric (``test_error``) is computed, which skips every solve.
    """

    def __init__(self, problem: BilevelOracle, cfg: ExactSolveConfig = DEFAULT_SOLVE,
                 reference: ReferenceOptimum | None = None, use_closed_form: bool = True,
                 task_only: bool = False):
        if task_only and not getattr(problem, "has_test", False):
            raise UnsupportedMetric(f"{type(problem).__name__} has no task metric")
        self.problem = problem
        self.task_only = task_only
        self.cfg = cfg
        self.reference = reference
        self.use_closed_form = use_closed_form and hasattr(problem, "closed_form")
        self._z = None
        self._v = None

    def __call__(self, state: JointState) -> dict:
        problem = self.problem
        if self.task_only:
            return {"test_error": problem.test_error(state.z)}
        if self.use_closed_form:
            h, grad, z_star, v_star = problem.closed_form(state.x)
        else:
            h, grad, z_star, v_star = value_and_grad(problem, state.x, self.cfg, z0=self._z,
                                                     v0=self._v, return_solutions=True)
            self._z, self._v = z_star, v_star
        row = {
            "h": float(h),
            "grad_norm2": float(grad @ grad),
            "delta_z": float(np.sum((state.z - z_star) ** 2)),
            "delta_v": float(np.sum((state.v - v_star) ** 2)),
        }
        if hasattr(problem, "suboptimality"):
            row["subopt"] = problem.suboptimality(state.x)
        elif self.reference is not None:
            row["subopt"] = float(h - self.reference.h_star)
        if getattr(problem, "has_test", False):
            row["test_error"] = problem.test_error(state.z)
        return row


test_error.__test__ = False  # keep pytest from collecting it when imported
