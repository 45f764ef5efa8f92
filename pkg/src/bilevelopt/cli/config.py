"""Experiment configuration files (YAML or JSON).

A config names one problem, one or more solvers and a list of seeds::

    name: quadratic-demo
    problem:
      family: quadratic          # quadratic | toy-ridge | logreg | hyperclean
      seed: 0
      params: {n: 64, m: 64, p: 10, d: 10, mu: 0.5}
    solvers:
      - method: saba
        alpha: 0.1
        r: 10                    # beta = alpha / r; or give beta directly
      - method: soba
        label: soba-slow         # defaults to the method name
        alpha: 0.1
        beta: 0.01
        exponents: [1/2, 1/2]    # defaults depend on the method
        batch: [4, 4]
    seeds: [0, 1, 2]
    total_iters: 1000
    eval_every: 50
    output: results/demo

Solver entries override the top-level ``total_iters``, ``eval_every``,
``time_budget`` and ``call_budget``.  A ``grid`` block drives ``bilevelopt
grid``.  The JSON manifest written by a run is itself a valid config.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import jsonschema
import yaml

from ..oracle import BatchSpec
from ..solvers import METHODS, SolverConfig, StepSchedule
from ..solvers.grid import HYPERCLEAN_GRID, LOGREG_GRID, log_grid
from ..solvers.schedule import DEFAULT_EXPONENTS

FAMILIES = ("quadratic", "toy-ridge", "logreg", "hyperclean")
GRID_PRESETS = {"logreg": LOGREG_GRID, "hyperclean": HYPERCLEAN_GRID}

_pos_int = {"type": "integer", "minimum": 1}
_nonneg_int = {"type": "integer", "minimum": 0}
_pos_num = {"type": "number", "exclusiveMinimum": 0}
_exponent = {"oneOf": [{"type": "number"}, {"type": "string"}]}
_path = {"type": "string", "minLength": 1}
_values = {
    "oneOf": [
        {"type": "array", "items": _pos_num, "minItems": 1},
        {"type": "object", "required": ["geom"], "additionalProperties": False,
         "properties": {"geom": {"type": "array", "minItems": 3, "maxItems": 3,
                                 "prefixItems": [_pos_num, _pos_num, _pos_int]}}},
    ]
}

SOLVER_SCHEMA = {
    "type": "object",
    "required": ["method", "alpha"],
    "additionalProperties": False,
    "properties": {
        "method": {"enum": list(METHODS)},
        "label": {"type": "string", "pattern": r"^[A-Za-z0-9_.+-]+$"},
        "alpha": _pos_num,
        "beta": {"type": "number", "minimum": 0},
        "r": _pos_num,
        "exponents": {"type": "array", "minItems": 2, "maxItems": 2, "items": _exponent},
        "batch": {"type": "array", "minItems": 2, "maxItems": 2, "items": _pos_int},
        "total_iters": _nonneg_int,
        "eval_every": _pos_int,
        "inner_steps": _pos_int,
        "neumann_steps": _nonneg_int,
        "eta": _pos_num,
        "recompute_every": {"oneOf": [_pos_int, {"const": "auto"}, {"type": "null"}]},
        "memory_init": {"enum": ["full", "zeros"]},
        "time_budget": {"oneOf": [_pos_num, {"type": "null"}]},
        "call_budget": {"oneOf": [_pos_int, {"type": "null"}]},
    },
}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["problem", "solvers", "seeds"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "problem": {
            "type": "object",
            "required": ["family"],
            "additionalProperties": False,
            "properties": {
                "family": {"enum": list(FAMILIES)},
                "seed": _nonneg_int,
                "params": {"type": "object"},
                "data": {"type": "object", "additionalProperties": _path},
                "x0": {"oneOf": [{"type": "number"},
                                 {"type": "array", "items": {"type": "number"}}]},
                "reference": _path,
            },
        },
        "solvers": {"type": "array", "minItems": 1, "items": SOLVER_SCHEMA},
        "seeds": {"type": "array", "minItems": 1, "items": _nonneg_int},
        "total_iters": _nonneg_int,
        "eval_every": _pos_int,
        "time_budget": {"oneOf": [_pos_num, {"type": "null"}]},
        "call_budget": {"oneOf": [_pos_int, {"type": "null"}]},
        "metrics": {"enum": ["full", "task"]},
        "output": _path,
        "jobs": _pos_int,
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "preset": {"enum": list(GRID_PRESETS)},
                "alphas": _values,
                "rs": _values,
                "objective": {"type": "string"},
                "runs_per_cell": _pos_int,
                "budget": _pos_int,
            },
        },
    },
}

PARAM_SCHEMAS = {
    "quadratic": {
        "required": ["n", "m", "p", "d", "mu"],
        "properties": {"n": _pos_int, "m": _pos_int, "p": _pos_int, "d": _pos_int,
                       "mu": _pos_num, "spread": _pos_num, "coupling": {"type": "number"}},
    },
    "toy-ridge": {"properties": {}},
    "logreg": {"properties": {"n": _pos_int, "m": _pos_int, "p": _pos_int,
                              "n_test": _nonneg_int}},
    "hyperclean": {"properties": {"n_train": _pos_int, "n_val": _pos_int,
                                  "n_test": _nonneg_int, "n_features": _pos_int,
                                  "num_classes": {"type": "integer", "minimum": 2},
                                  "p_corrupt": {"type": "number", "minimum": 0, "maximum": 1},
                                  "c_r": {"type": "number", "minimum": 0},
                                  "separation": _pos_num}},
}
DATA_KEYS = {
    "logreg": {"required": ["train", "val"], "allowed": {"train", "val", "test"}},
    "hyperclean": {"required": ["train_images", "train_labels"],
                   "allowed": {"train_images", "train_labels", "test_images", "test_labels"}},
}


class ConfigError(ValueError):
    """Invalid experiment config; the message starts with the offending field path."""

    def __init__(self, path: str, msg: str):
        super().__init__(f"{path}: {msg}" if path else msg)
        self.path = path


def _field_path(parts) -> str:
    out = ""
    for part in parts:
        out += f"[{part}]" if isinstance(part, int) else (f".{part}" if out else str(part))
    return out


def _validate(doc, schema, prefix=()):
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(doc), key=lambda e: (list(e.absolute_path), e.message))
    if errors:
        err = jsonschema.exceptions.best_match(errors)
        raise ConfigError(_field_path([*prefix, *err.absolute_path]) or "<root>", err.message)


@dataclass
class SolverSpec:
    label: str
    config: SolverConfig


@dataclass
class ExperimentConfig:
    name: str
    problem: dict
    solvers: list
    seeds: list
    output: Path | None
    metrics: str = "full"
    jobs: int = 1
    grid: dict | None = None
    doc: dict = field(default_factory=dict)
    base_dir: Path = field(default_factory=Path.cwd)

    @property
    def config_hash(self) -> str:
        return config_hash(self.doc)

    def cells(self):
        """Every ``(label, SolverConfig)`` pair with its seed filled in."""
        for spec in self.solvers:
            for seed in self.seeds:
                yield spec.label, replace(spec.config, seed=seed)

    def with_seed_offset(self, offset: int) -> "ExperimentConfig":
        if not offset:
            return self
        doc = json.loads(json.dumps(self.doc))
        doc["seeds"] = [s + offset for s in doc["seeds"]]
        return config_from_dict(doc, self.base_dir)


def config_hash(doc: dict) -> str:
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def load_config(path) -> ExperimentConfig:
    """Read a YAML or JSON config (or a run manifest) and validate it."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("", f"cannot read {path}: {exc}") from exc
    try:
        doc = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError("", f"{path} is not valid {path.suffix.lstrip('.') or 'YAML'}: {exc}") from exc
    if isinstance(doc, dict) and "manifest_version" in doc:
        doc = doc["config"]
    return config_from_dict(doc, path.parent)


def _solver_config(entry: dict, defaults: dict, where: str) -> SolverConfig:
    method = entry["method"]
    if ("beta" in entry) == ("r" in entry):
        raise ConfigError(where, "give exactly one of 'beta' and 'r'")
    alpha = float(entry["alpha"])
    beta = float(entry["beta"]) if "beta" in entry else alpha / float(entry["r"])
    a, b = entry.get("exponents", DEFAULT_EXPONENTS[method])
    try:
        schedule = StepSchedule(alpha, beta, a, b)
    except ValueError as exc:
        raise ConfigError(f"{where}.exponents", str(exc)) from exc
    batch = BatchSpec(*entry.get("batch", (1, 1)))
    kwargs = {k: v for k, v in defaults.items() if v is not None}
    for key in ("total_iters", "eval_every", "time_budget", "call_budget", "inner_steps",
                "neumann_steps", "eta", "recompute_every", "memory_init"):
        if key in entry:
            kwargs[key] = entry[key]
    try:
        return SolverConfig(method=method, schedule=schedule, batch=batch, **kwargs)
    except ValueError as exc:
        raise ConfigError(where, str(exc)) from exc


def _grid_values(spec):
    if isinstance(spec, dict):
        start, stop, num = spec["geom"]
        return [float(v) for v in log_grid(start, stop, num)]
    return [float(v) for v in spec]


def resolve_grid(grid: dict) -> dict:
    """Expand a ``grid`` block into explicit ``alphas`` / ``rs`` lists."""
    out = {"objective": grid.get("objective", "h"), "runs_per_cell": grid.get("runs_per_cell", 1),
           "budget": grid.get("budget")}
    preset = GRID_PRESETS.get(grid.get("preset"), {})
    for key in ("alphas", "rs"):
        if key in grid:
            out[key] = _grid_values(grid[key])
        elif key in preset:
            out[key] = [float(v) for v in preset[key]]
        else:
            raise ConfigError(f"grid.{key}", "missing (give a list, a geom spec or a preset)")
    return out


def config_from_dict(doc, base_dir=None) -> ExperimentConfig:
    """Validate a parsed config document and build the typed config."""
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "config must be a mapping")
    _validate(doc, CONFIG_SCHEMA)
    problem = doc["problem"]
    family = problem["family"]
    schema = dict(type="object", additionalProperties=False, **PARAM_SCHEMAS[family])
    _validate(problem.get("params", {}), schema, ("problem", "params"))
    if "data" in problem:
        keys = DATA_KEYS.get(family)
        if keys is None:
            raise ConfigError("problem.data", f"family {family!r} takes no data files")
        missing = keys["required"] - problem["data"].keys()
        extra = problem["data"].keys() - keys["allowed"]
        if missing:
            raise ConfigError("problem.data", f"missing {sorted(missing)}")
        if extra:
            raise ConfigError("problem.data", f"unknown keys {sorted(extra)}")
    defaults = {k: doc.get(k) for k in ("total_iters", "eval_every", "time_budget",
                                        "call_budget")}
    solvers, labels = [], set()
    for k, entry in enumerate(doc["solvers"]):
        where = f"solvers[{k}]"
        label = entry.get("label", entry["method"])
        if label in labels:
            raise ConfigError(f"{where}.label", f"duplicate solver label {label!r}")
        labels.add(label)
        solvers.append(SolverSpec(label, _solver_config(entry, defaults, where)))
    if len(set(doc["seeds"])) != len(doc["seeds"]):
        raise ConfigError("seeds", "seeds must be distinct")
    grid = resolve_grid(doc["grid"]) if "grid" in doc else None
    return ExperimentConfig(
        name=doc.get("name", "experiment"),
        problem=problem,
        solvers=solvers,
        seeds=list(doc["seeds"]),
        output=Path(doc["output"]) if "output" in doc else None,
        metrics=doc.get("metrics", "full"),
        jobs=doc.get("jobs", 1),
        grid=grid,
        doc=doc,
        base_dir=Path(base_dir) if base_dir is not None else Path.cwd(),
    )
