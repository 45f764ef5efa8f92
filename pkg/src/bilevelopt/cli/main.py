"""``bilevelopt`` command line.

    bilevelopt run --config exp.yaml [--out DIR] [--jobs N] [--seed-offset K]
    bilevelopt grid --config exp.yaml [--out DIR] [--jobs N] [--seed-offset K]
    bilevelopt summarize RESULTS.csv [...] --out curves.csv [--agg median|mean|inf]
    bilevelopt fetch-data NAME_OR_URL [--out DIR] [--sha256 HEX] [--force]
    bilevelopt cache-optimum --config exp.yaml --out optimum.json [--tol TOL]

Datasets are looked up in (and downloaded to) ``$BILEVELOPT_DATA_DIR``,
default ``~/.cache/bilevelopt``.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from ..metrics import StaleCacheError, ToleranceNotMet
from ..problems import DATA_DIR_ENV
from .config import ConfigError, load_config
from .results import AGGREGATIONS, IncompatibleTables, read_tables, summarize
from .runner import (
    DATASETS,
    ChecksumError,
    cache_optimum,
    fetch_data,
    run_experiment,
    run_gridsearch,
)

log = logging.getLogger("bilevelopt")


def _config(args):
    config = load_config(args.config)
    return config.with_seed_offset(args.seed_offset)


def cmd_run(args) -> int:
    config = _config(args)
    table, manifest = run_experiment(config, out=args.out, jobs=args.jobs)
    bad = [c for c in manifest["cells"] if c["status"] == "diverged"]
    print(f"{len(manifest['cells'])} cells, {len(table)} rows, {len(bad)} diverged; "
          f"config hash {manifest['config_hash'][:12]}")
    return 0


def cmd_grid(args) -> int:
    report = run_gridsearch(_config(args), out=args.out, jobs=args.jobs)
    for label, best in report["methods"].items():
        if best["alpha"] is None:
            print(f"{label}: {best['status']}")
        else:
            print(f"{label}: alpha={best['alpha']:.6g} beta={best['beta']:.6g} "
                  f"(r={best['r']:.6g}, {report['objective']}={best['score']:.6g})")
    return 0


def cmd_summarize(args) -> int:
    curves = summarize(read_tables(args.tables), args.agg)
    curves.write_csv(args.out)
    for method, count in curves.excluded.items():
        print(f"{method}: {count} diverged cell(s) excluded")
    print(f"wrote {len(curves.rows)} rows to {args.out}")
    return 0


def cmd_fetch(args) -> int:
    for path in fetch_data(args.dataset, root=args.out, sha256=args.sha256, force=args.force):
        print(path)
    return 0


def cmd_cache(args) -> int:
    ref = cache_optimum(load_config(args.config), args.out, tol=args.tol)
    print(json.dumps({"h_star": ref.h_star, "grad_norm": ref.metadata["grad_norm"],
                      "path": str(args.out)}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bilevelopt", description="Stochastic bilevel optimization benchmarks.",
        epilog=f"Dataset cache root: ${DATA_DIR_ENV} (default ~/.cache/bilevelopt).")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def experiment(name, help_, func):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="YAML or JSON config (or a manifest)")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--jobs", type=int, default=None, help="worker processes")
        p.add_argument("--seed-offset", type=int, default=0, help="added to every seed")
        p.set_defaults(func=func)

    experiment("run", "run every (solver, seed) cell", cmd_run)
    experiment("grid", "grid-search step sizes per solver", cmd_grid)

    p = sub.add_parser("summarize", help="aggregate seeds into curves")
    p.add_argument("tables", nargs="+", help="result CSV files")
    p.add_argument("--out", required=True, help="curve CSV to write")
    p.add_argument("--agg", choices=AGGREGATIONS, default="median")
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("fetch-data", help="download a dataset and check its SHA-256")
    p.add_argument("dataset", help=f"one of {sorted(DATASETS)} or a URL")
    p.add_argument("--out", help=f"target directory (default ${DATA_DIR_ENV})")
    p.add_argument("--sha256", help="expected digest of a single-URL download")
    p.add_argument("--force", action="store_true", help="download even if present")
    p.set_defaults(func=cmd_fetch)

    p = sub.add_parser("cache-optimum", help="compute and store h* for a problem")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="JSON file to write")
    p.add_argument("--tol", type=float, default=1e-12)
    p.set_defaults(func=cmd_cache)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING if args.verbose == 0 else (logging.INFO if args.verbose == 1
                                                       else logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "jobs", None) is not None and args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
    except (IncompatibleTables, ChecksumError, StaleCacheError, ToleranceNotMet,
            ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
