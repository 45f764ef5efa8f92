"""Experiment orchestration: cells, grid searches, cached optima and datasets."""
from __future__ import annotations

import csv
import json
import logging
import os
import platform
import shutil
import tempfile
import time
import urllib.parse
import urllib.request
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import replace
from pathlib import Path

import numpy as np
import scipy

from .. import __version__
from ..metrics import compute_reference_optimum
from ..problems import data_dir
from ..solvers import grid_search, run
from ..solvers.grid import RUNNING_OBJECTIVES
from .build import build_problem, data_files, file_sha256, initial_state, make_evaluator
from .config import ConfigError, ExperimentConfig, config_from_dict, config_hash
from .results import ResultTable

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1
CELL_DIR = "cells"
MERGED_CSV = "results.csv"
MANIFEST = "manifest.json"


def environment() -> dict:
    return {
        "versions": {"bilevelopt": __version__, "numpy": np.__version__,
                     "scipy": scipy.__version__, "python": platform.python_version()},
        "platform": {"system": platform.system(), "machine": platform.machine(),
                     "platform": platform.platform()},
    }


def prepare_output(config: ExperimentConfig, out=None) -> Path:
    out = Path(out) if out is not None else config.output
    if out is None:
        raise ConfigError("output", "no output directory (set 'output' or pass --out)")
    if not out.is_absolute() and config.output is not None and out == config.output:
        out = config.base_dir / out
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError("output", f"cannot create {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise ConfigError("output", f"{out} is not writable")
    return out


def replayable_doc(config: ExperimentConfig) -> dict:
    """The config with data and reference paths made absolute, so the manifest
    replays from any working directory."""
    doc = json.loads(json.dumps(config.doc))
    problem = doc["problem"]
    if "data" in problem:
        problem["data"] = {k: str(p.resolve())
                           for k, p in data_files(problem, config.base_dir).items()}
    if "reference" in problem:
        ref = Path(problem["reference"])
        problem["reference"] = str((ref if ref.is_absolute() else config.base_dir / ref).resolve())
    doc.pop("output", None)
    return doc


def _cell_task(doc: dict, base_dir: str, index: int, seed: int):
    config = config_from_dict(doc, base_dir)
    spec = config.solvers[index]
    problem = build_problem(config.problem, config.base_dir)
    evaluator = make_evaluator(config, problem)
    state0 = initial_state(problem, config.problem)
    cfg = replace(spec.config, seed=seed)
    record = run(problem, cfg, state0=state0, evaluator=evaluator)
    table = ResultTable.from_record(spec.label, record)
    final = record.rows[-1]
    info = {"method": spec.label, "solver": cfg.method, "seed": seed, "status": record.status,
            "message": record.message, "final_t": int(final["t"]),
            "oracle_calls": int(final["oracle_calls"])}
    return index, seed, table, info


def _cell_file(label: str, seed: int) -> str:
    return f"{CELL_DIR}/{label}-seed{seed}.csv"


def run_experiment(config: ExperimentConfig, out=None, jobs: int | None = None):
    """Run every ``(solver, seed)`` cell and write one CSV per cell, the merged
    CSV and ``manifest.json``.  Returns ``(table, manifest)``.

    Cells run in a pool of ``jobs`` worker processes; files are written by
    the parent as cells finish and the merged table keeps config order.
    """
    out = prepare_output(config, out)
    jobs = jobs or config.jobs
    doc = replayable_doc(config)
    base_dir = str(config.base_dir)
    # fail on bad problem blocks before spawning anything
    build_problem(config.problem, config.base_dir)
    (out / CELL_DIR).mkdir(exist_ok=True)
    tasks = [(doc, base_dir, k, seed) for k in range(len(config.solvers)) for seed in config.seeds]
    results = {}

    def finish(index, seed, table, info):
        info["csv"] = _cell_file(info["method"], seed)
        table.write_csv(out / info["csv"])
        results[(index, seed)] = (table, info)
        log.info("cell %s seed=%d: %s at t=%d (%d oracle calls)", info["method"], seed,
                 info["status"], info["final_t"], info["oracle_calls"])

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_cell_task, *task) for task in tasks]
            for future in as_completed(futures):
                finish(*future.result())
    else:
        for task in tasks:
            finish(*_cell_task(*task))
    ordered = [results[(k, seed)] for _, _, k, seed in tasks]
    table = ResultTable.concat(t for t, _ in ordered)
    table.metric_names()
    table.write_csv(out / MERGED_CSV)
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "name": config.name,
        "config_hash": config_hash(doc),
        "config": doc,
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        **environment(),
        "data_files": {k: file_sha256(p) for k, p in doc["problem"].get("data", {}).items()},
        "merged_csv": MERGED_CSV,
        "cells": [info for _, info in ordered],
    }
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2))
    return table, manifest


def _objective_names(evaluator, state0) -> set:
    names = set(evaluator(state0))
    if "grad_norm2" in names:
        names.update(RUNNING_OBJECTIVES)
    return names


def run_gridsearch(config: ExperimentConfig, out=None, jobs: int | None = None) -> dict:
    """Grid-search ``(alpha, beta = alpha / r)`` for every solver of ``config``
    and keep the pair with the lowest median final objective.  Writes
    ``grid.csv`` (every replicate) and ``best.json``; returns the report."""
    if config.grid is None:
        raise ConfigError("grid", "config has no grid block")
    out = prepare_output(config, out)
    jobs = jobs or config.jobs
    grid = config.grid
    problem = build_problem(config.problem, config.base_dir)
    evaluator = make_evaluator(config, problem)
    state0 = initial_state(problem, config.problem)
    if grid["objective"] not in _objective_names(evaluator, state0):
        raise ConfigError("grid.objective", f"{grid['objective']!r} is not a logged metric of "
                          f"this problem")
    seed = config.seeds[0]
    lines = [("method", "alpha", "r", "beta", "replicate", "seed", "value", "status")]
    report = {"objective": grid["objective"], "config_hash": config_hash(replayable_doc(config)),
              **environment(), "methods": {}}
    for spec in config.solvers:
        cfg = replace(spec.config, seed=seed)
        result = grid_search(problem, cfg, grid["alphas"], grid["rs"],
                             runs_per_cell=grid["runs_per_cell"], budget=grid["budget"],
                             objective=grid["objective"], state0=state0, jobs=jobs,
                             evaluator=evaluator)
        for cell in result.cells:
            for k, (value, status) in enumerate(zip(cell.values, cell.statuses)):
                lines.append((spec.label, repr(cell.alpha), repr(cell.r), repr(cell.beta), k,
                              seed + k, repr(float(value)), status))
        best = result.best
        report["methods"][spec.label] = {
            "status": result.status,
            "alpha": None if best is None else best.alpha,
            "r": None if best is None else best.r,
            "beta": None if best is None else best.beta,
            "score": None if best is None else best.score,
        }
        if best is None:
            log.warning("grid %s: no convergent cell", spec.label)
        else:
            log.info("grid %s: best alpha=%.4g beta=%.4g (%s=%.4g)", spec.label, best.alpha,
                     best.beta, grid["objective"], best.score)
    with open(out / "grid.csv", "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh).writerows(lines)
    (out / "best.json").write_text(json.dumps(report, indent=2))
    return report


def cache_optimum(config: ExperimentConfig, path, tol: float = 1e-12):
    """Compute the reference optimum of the config's problem and save it."""
    problem = build_problem(config.problem, config.base_dir)
    x0 = initial_state(problem, config.problem).x
    ref = compute_reference_optimum(problem, x0=x0, tol=tol)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ref.save(path)
    return ref


# -- datasets ------------------------------------------------------------------

# Known download locations.  No checksums are shipped: the first download is
# trusted and its digest recorded (pass --sha256 to pin one instead).
DATASETS = {
    "ijcnn1": [
        "https://www.csie.ntu.edu.tw/~cjlin/libsvmtools/datasets/binary/ijcnn1.bz2",
        "https://www.csie.ntu.edu.tw/~cjlin/libsvmtools/datasets/binary/ijcnn1.t.bz2",
    ],
    "mnist": [
        "https://ossci-datasets.s3.amazonaws.com/mnist/train-images-idx3-ubyte.gz",
        "https://ossci-datasets.s3.amazonaws.com/mnist/train-labels-idx1-ubyte.gz",
        "https://ossci-datasets.s3.amazonaws.com/mnist/t10k-images-idx3-ubyte.gz",
        "https://ossci-datasets.s3.amazonaws.com/mnist/t10k-labels-idx1-ubyte.gz",
    ],
}
CHECKSUMS = "checksums.json"


class ChecksumError(RuntimeError):
    pass


def _registry(root: Path) -> dict:
    path = root / CHECKSUMS
    return json.loads(path.read_text()) if path.exists() else {}


def fetch_file(url: str, root=None, sha256: str | None = None, force: bool = False) -> Path:
    """Download ``url`` into the dataset root and verify its SHA-256.

    The expected digest is ``sha256`` when given, else the one recorded by an
    earlier download of the same file name.  With neither, the digest of
    this download is recorded (trust on first use).
    """
    root = Path(root) if root is not None else data_dir()
    root.mkdir(parents=True, exist_ok=True)
    name = Path(urllib.parse.urlparse(url).path).name
    if not name:
        raise ValueError(f"cannot infer a file name from {url!r}")
    registry = _registry(root)
    expected = sha256.lower() if sha256 else registry.get(name)
    target = root / name
    if target.exists() and not force:
        digest = file_sha256(target)
        if expected is not None and digest != expected:
            raise ChecksumError(f"{target}: sha256 {digest} does not match {expected}")
        log.info("%s already present", target)
    else:
        fd, tmp = tempfile.mkstemp(dir=root, prefix=f".{name}.")
        try:
            with os.fdopen(fd, "wb") as fh, urllib.request.urlopen(url) as resp:
                shutil.copyfileobj(resp, fh)
            digest = file_sha256(tmp)
            if expected is not None and digest != expected:
                raise ChecksumError(f"{url}: sha256 {digest} does not match {expected}")
            os.replace(tmp, target)
        finally:
            if os.path.exists(tmp):
                os.unlink(tmp)
        if expected is None:
            log.warning("%s: no checksum known, recording sha256 %s", name, digest)
    if registry.get(name) != digest:
        registry[name] = digest
        (root / CHECKSUMS).write_text(json.dumps(registry, indent=2, sort_keys=True))
    return target


def fetch_data(name_or_url: str, root=None, sha256: str | None = None,
               force: bool = False) -> list:
    """Fetch a named dataset (see :data:`DATASETS`) or a single URL."""
    if name_or_url in DATASETS:
        if sha256:
            raise ValueError("--sha256 applies to a single URL, not a named dataset")
        return [fetch_file(url, root, None, force) for url in DATASETS[name_or_url]]
    if "://" not in name_or_url:
        raise ValueError(f"unknown dataset {name_or_url!r}; known: {sorted(DATASETS)} "
                         f"(or pass a URL)")
    return [fetch_file(name_or_url, root, sha256, force)]

