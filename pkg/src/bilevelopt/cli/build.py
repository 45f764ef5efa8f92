"""Turn the ``problem`` block of a config into a problem instance."""
from __future__ import annotations

import functools
import hashlib
import json
from pathlib import Path

import numpy as np

from ..metrics import Evaluator, ReferenceOptimum
from ..oracle import BilevelOracle, JointState, ProblemDims
from ..problems import (
    MNIST_DIMS,
    LabeledSet,
    data_dir,
    load_libsvm,
    make_hyperclean,
    make_logreg_hyper,
    make_quadratic,
    make_synthetic_hyperclean,
    make_synthetic_logreg,
    make_toy_ridge,
    read_idx,
)
from .config import ConfigError, ExperimentConfig


def resolve_data_path(name: str, base_dir: Path, where: str = "problem.data") -> Path:
    """Absolute paths as given; relative ones against the config's folder, then
    the dataset cache root."""
    path = Path(name)
    if path.is_absolute():
        candidates = [path]
    else:
        candidates = [Path(base_dir) / path, data_dir() / path]
    for candidate in candidates:
        if candidate.exists():
            return candidate
    raise ConfigError(where, f"file {name!r} not found (looked in "
                      f"{', '.join(str(c.parent) for c in candidates)})")


def data_files(spec: dict, base_dir: Path) -> dict:
    """``{key: path}`` of the data files a problem block refers to."""
    return {key: resolve_data_path(name, base_dir) for key, name in spec.get("data", {}).items()}


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _idx_set(images, labels, start, stop) -> LabeledSet:
    X = images[start:stop].reshape(stop - start, -1).astype(float) / 255.0
    return LabeledSet(X, labels[start:stop].astype(np.int64))


def _hyperclean_from_idx(files: dict, params: dict, seed: int):
    images, labels = read_idx(files["train_images"]), read_idx(files["train_labels"])
    n_train = params.get("n_train", MNIST_DIMS["n_train"])
    n_val = params.get("n_val", MNIST_DIMS["n_val"])
    if n_train + n_val > len(labels):
        raise ConfigError("problem.params", f"n_train + n_val = {n_train + n_val} exceeds "
                          f"the {len(labels)} available training images")
    train = _idx_set(images, labels, 0, n_train)
    val = _idx_set(images, labels, n_train, n_train + n_val)
    test = None
    if "test_images" in files:
        t_images, t_labels = read_idx(files["test_images"]), read_idx(files["test_labels"])
        n_test = min(params.get("n_test", MNIST_DIMS["n_test"]), len(t_labels))
        test = _idx_set(t_images, t_labels, 0, n_test)
    return make_hyperclean(train, val, test, p_corrupt=params.get("p_corrupt", 0.5),
                           c_r=params.get("c_r", 0.2), seed=seed,
                           num_classes=params.get("num_classes", MNIST_DIMS["num_classes"]))


def _build(spec: dict, base_dir: Path) -> BilevelOracle:
    family = spec["family"]
    params = dict(spec.get("params", {}))
    seed = spec.get("seed", 0)
    files = data_files(spec, base_dir)
    if family == "quadratic":
        dims = ProblemDims(*(params.pop(k) for k in ("n", "m", "p", "d")))
        return make_quadratic(seed, dims, **params)
    if family == "toy-ridge":
        return make_toy_ridge(seed)
    if family == "logreg":
        if not files:
            return make_synthetic_logreg(seed=seed, **params)
        num_features = params.get("p")
        sets = {k: load_libsvm(path, num_features) for k, path in files.items()}
        return make_logreg_hyper(sets["train"], sets["val"], sets.get("test"))
    if files:
        return _hyperclean_from_idx(files, params, seed)
    return make_synthetic_hyperclean(seed=seed, **params)


@functools.lru_cache(maxsize=4)
def _cached(blob: str, base_dir: str) -> BilevelOracle:
    return _build(json.loads(blob), Path(base_dir))


def build_problem(spec: dict, base_dir=".") -> BilevelOracle:
    """Build (and memoize per process) the problem described by ``spec``."""
    try:
        return _cached(json.dumps(spec, sort_keys=True), str(base_dir))
    except TypeError as exc:
        raise ConfigError("problem.params", str(exc)) from exc


def initial_state(problem: BilevelOracle, spec: dict) -> JointState:
    """Zero ``(z, v)`` and ``x`` from the optional ``x0`` entry (default zero)."""
    state = JointState.zeros(problem.dims)
    if "x0" in spec:
        x0 = np.asarray(spec["x0"], dtype=float)
        if x0.ndim == 0:
            x0 = np.full(problem.dims.d, float(x0))
        if x0.shape != (problem.dims.d,):
            raise ConfigError("problem.x0", f"expected {problem.dims.d} values, got {x0.size}")
        state.x = x0
    return state


def make_evaluator(config: ExperimentConfig, problem: BilevelOracle) -> Evaluator:
    reference = None
    if "reference" in config.problem:
        path = resolve_data_path(config.problem["reference"], config.base_dir,
                                 "problem.reference")
        reference = ReferenceOptimum.load(path, problem)
    return Evaluator(problem, reference=reference, task_only=config.metrics == "task")
