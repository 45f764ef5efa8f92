import json
import logging
import math
import struct

import numpy as np
import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from bilevelopt.cli import (
    ConfigError,
    IncompatibleTables,
    ResultRow,
    ResultTable,
    config_from_dict,
    load_config,
    run_experiment,
    run_gridsearch,
    summarize,
)
from bilevelopt.cli.build import build_problem
from bilevelopt.cli.main import main
from bilevelopt.cli.runner import ChecksumError, cache_optimum, fetch_data, fetch_file
from bilevelopt.metrics import ReferenceOptimum
from bilevelopt.problems import SparseDataset, serialize_libsvm

QUAD = {"family": "quadratic", "seed": 0, "params": {"n": 12, "m": 10, "p": 4, "d": 3, "mu": 0.5}}


def make_doc(**overrides):
    doc = {
        "name": "t",
        "problem": json.loads(json.dumps(QUAD)),
        "solvers": [{"method": "saba", "alpha": 0.1, "r": 10}],
        "seeds": [0],
        "total_iters": 10,
        "eval_every": 5,
    }
    doc.update(overrides)
    return doc


def write_config(tmp_path, doc, name="exp.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(doc) if name.endswith(".yaml") else json.dumps(doc))
    return path


def metric_columns(table):
    return [(r.method, r.seed, r.t, r.oracle_calls, r.metric_name, r.metric_value)
            for r in table.rows]


def table_of(cells):
    """``cells``: ``{(method, seed): {t: {metric: value}}}`` (status ok)."""
    rows = []
    for (method, seed), trace in cells.items():
        for t, metrics in trace.items():
            for name, value in metrics.items():
                rows.append(ResultRow(method, seed, t, 10 * t, 0.1 * t, name, value, "ok"))
    return ResultTable(rows)


# -- config ----------------------------------------------------------------------


class TestConfig:
    def test_yaml_and_json_agree(self, tmp_path):
        doc = make_doc()
        a = load_config(write_config(tmp_path, doc, "a.yaml"))
        b = load_config(write_config(tmp_path, doc, "b.json"))
        assert a.config_hash == b.config_hash
        (label, cfg), = list(a.cells())
        assert label == "saba" and cfg.schedule.beta == pytest.approx(0.01)
        assert cfg.total_iters == 10 and cfg.eval_every == 5

    def test_defaults_and_overrides(self):
        doc = make_doc(solvers=[
            {"method": "soba", "alpha": 0.2, "beta": 0.05, "batch": [3, 2], "total_iters": 7,
             "exponents": ["1/2", 0.5], "label": "soba-half"},
            {"method": "two-loop-hia", "alpha": 0.1, "r": 1, "inner_steps": 3,
             "neumann_steps": 4, "eta": 0.05},
        ], seeds=[3, 4])
        config = config_from_dict(doc)
        cells = list(config.cells())
        assert [(lbl, c.seed) for lbl, c in cells] == [
            ("soba-half", 3), ("soba-half", 4), ("two-loop-hia", 3), ("two-loop-hia", 4)]
        soba = cells[0][1]
        assert (soba.schedule.a, soba.schedule.b) == (0.5, 0.5)
        assert soba.batch.batch_size_inner == 3 and soba.total_iters == 7
        hia = cells[2][1]
        assert (hia.schedule.a, hia.schedule.b) == (0.5, 0.5)
        assert (hia.inner_steps, hia.neumann_steps, hia.eta) == (3, 4, 0.05)

    @pytest.mark.parametrize("mutate, path", [
        (lambda d: d["solvers"][0].update(alpha=-1.0), "solvers[0].alpha"),
        (lambda d: d["solvers"][0].update(method="adam"), "solvers[0].method"),
        (lambda d: d["solvers"][0].update(beta=0.1), "solvers[0]"),
        (lambda d: d["solvers"][0].pop("r"), "solvers[0]"),
        (lambda d: d["solvers"][0].update(exponents=[0.7, 0]), "solvers[0].exponents"),
        (lambda d: d["solvers"][0].update(batch=[0, 1]), "solvers[0].batch[0]"),
        (lambda d: d["solvers"].append({"method": "saba", "alpha": 1, "r": 1}),
         "solvers[1].label"),
        (lambda d: d["problem"].update(family="svm"), "problem.family"),
        (lambda d: d["problem"]["params"].pop("mu"), "problem.params"),
        (lambda d: d["problem"]["params"].update(n=0), "problem.params.n"),
        (lambda d: d["problem"].update(data={"train": "x"}), "problem.data"),
        (lambda d: d.update(seeds=[]), "seeds"),
        (lambda d: d.update(seeds=[1, 1]), "seeds"),
        (lambda d: d.pop("solvers"), "<root>"),
        (lambda d: d.update(colour="red"), "<root>"),
        (lambda d: d.update(grid={"alphas": [0.1]}), "grid.rs"),
    ])
    def test_errors_name_the_field(self, mutate, path):
        doc = make_doc()
        mutate(doc)
        with pytest.raises(ConfigError) as info:
            config_from_dict(doc)
        assert info.value.path == path
        assert str(info.value).startswith(path)

    def test_unparseable_file(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("problem: [unclosed")
        with pytest.raises(ConfigError, match="not valid"):
            load_config(path)

    def test_seed_offset(self):
        config = config_from_dict(make_doc(seeds=[0, 5])).with_seed_offset(100)
        assert config.seeds == [100, 105]
        assert [c.seed for _, c in config.cells()] == [100, 105]

    def test_grid_presets_and_geom(self):
        config = config_from_dict(make_doc(grid={"preset": "hyperclean"}))
        assert len(config.grid["alphas"]) == 11 and len(config.grid["rs"]) == 11
        config = config_from_dict(make_doc(grid={"preset": "logreg"}))
        assert len(config.grid["alphas"]) == 9 and len(config.grid["rs"]) == 7
        config = config_from_dict(make_doc(grid={"alphas": {"geom": [1e-3, 100, 11]},
                                                 "rs": [1.0]}))
        assert config.grid["alphas"][0] == pytest.approx(1e-3)
        assert config.grid["alphas"][-1] == pytest.approx(100.0)


# -- result tables ------------------------------------------------------------------

_floats = st.floats(allow_nan=True, allow_infinity=True)
_text = st.text(st.characters(blacklist_categories=("Cs",), blacklist_characters="\x00"),
               min_size=1, max_size=12)
_rows = st.lists(st.builds(
    ResultRow, _text, st.integers(0, 2 ** 31), st.integers(0, 10 ** 9), st.integers(0, 10 ** 12),
    st.floats(min_value=0, max_value=1e6), _text, _floats,
    st.sampled_from(["ok", "budget", "diverged"])), max_size=20)


class TestResultTable:
    @settings(max_examples=50, deadline=None)
    @given(rows=_rows)
    def test_csv_round_trip(self, tmp_path_factory, rows):
        path = tmp_path_factory.mktemp("rt") / "t.csv"
        table = ResultTable(rows)
        table.write_csv(path)
        assert ResultTable.read_csv(path) == table

    def test_csv_dialect(self, tmp_path):
        table = ResultTable([ResultRow("a,b", 0, 1, 2, 0.5, 'q"x', 1e-300, "ok")])
        table.write_csv(tmp_path / "t.csv")
        raw = (tmp_path / "t.csv").read_bytes()
        assert raw.startswith(b"method,seed,t,oracle_calls,wall_time,metric_name,metric_value")
        assert b'"a,b"' in raw and b'"q""x"' in raw and b"\r\n" in raw

    def test_bad_header(self, tmp_path):
        (tmp_path / "t.csv").write_text("a,b\n1,2\n")
        with pytest.raises(ValueError, match="header"):
            ResultTable.read_csv(tmp_path / "t.csv")

    def test_mixed_metric_sets(self):
        table = table_of({("a", 0): {0: {"h": 1.0}}, ("a", 1): {0: {"h": 1.0, "g": 2.0}}})
        with pytest.raises(IncompatibleTables):
            table.metric_names()
        with pytest.raises(IncompatibleTables):
            summarize(table)


class TestSummarize:
    def test_single_seed_is_its_own_curve(self):
        trace = {0: {"h": 3.0}, 5: {"h": 1.0}, 10: {"h": 2.0}}
        for agg in ("median", "mean"):
            curves = summarize(table_of({("a", 7): trace}), agg)
            t, v = curves.curve("a", "h")
            assert list(t) == [0, 5, 10] and list(v) == [3.0, 1.0, 2.0]

    def test_median_of_three(self):
        curves = summarize(table_of({("a", s): {0: {"h": v}} for s, v in
                                     enumerate([1.0, 100.0, 2.0])}))
        assert curves.curve("a", "h")[1][0] == 2.0

    def test_mean(self):
        curves = summarize(table_of({("a", s): {0: {"h": v}} for s, v in
                                     enumerate([1.0, 2.0, 6.0])}), "mean")
        assert curves.curve("a", "h")[1][0] == 3.0

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.lists(st.floats(0, 1e6), min_size=5, max_size=5), min_size=1,
                    max_size=5))
    def test_inf_never_increases(self, traces):
        table = table_of({("a", s): {t: {"grad_norm2": v} for t, v in enumerate(tr)}
                          for s, tr in enumerate(traces)})
        _, values = summarize(table, "inf").curve("a", "grad_norm2")
        assert np.all(np.diff(values) <= 0)

    def test_three_x_axes(self):
        curves = summarize(table_of({("a", 0): {1: {"h": 1.0}, 2: {"h": 0.5}}}))
        for axis, expected in (("t", [1, 2]), ("oracle_calls", [10, 20]),
                               ("wall_time", [0.1, 0.2])):
            assert curves.curve("a", "h", axis)[0] == pytest.approx(expected)

    def test_diverged_cell_excluded(self, caplog):
        table = table_of({("a", 0): {0: {"h": 1.0}}, ("a", 1): {0: {"h": 3.0}}})
        table.rows.append(ResultRow("a", 2, 0, 0, 0.0, "h", math.nan, "diverged"))
        with caplog.at_level(logging.WARNING):
            curves = summarize(table)
        assert curves.excluded == {"a": 1}
        assert curves.curve("a", "h")[1][0] == 2.0
        assert "1 diverged" in caplog.text

    def test_all_diverged(self):
        table = ResultTable([ResultRow("a", 0, 0, 0, 0.0, "h", math.nan, "diverged")])
        with pytest.raises(ValueError, match="no completed cell"):
            summarize(table)


# -- running experiments --------------------------------------------------------------


class TestRunExperiment:
    def test_single_cell(self, tmp_path):
        config = config_from_dict(make_doc())
        table, manifest = run_experiment(config, out=tmp_path / "out")
        out = tmp_path / "out"
        assert sorted(p.name for p in (out / "cells").iterdir()) == ["saba-seed0.csv"]
        assert (out / "results.csv").exists()
        stored = json.loads((out / "manifest.json").read_text())
        assert stored["config_hash"] == manifest["config_hash"]
        assert set(stored) >= {"versions", "platform", "cells", "config", "created"}
        assert stored["cells"][0]["status"] == "ok" and stored["cells"][0]["final_t"] == 10
        assert ResultTable.read_csv(out / "results.csv") == table
        assert ResultTable.read_csv(out / "cells" / "saba-seed0.csv") == table
        assert sorted({r.t for r in table.rows}) == [0, 5, 10]

    def test_rerun_and_replay_are_bitwise(self, tmp_path):
        doc = make_doc(solvers=[{"method": "saba", "alpha": 0.1, "r": 10},
                                {"method": "soba", "alpha": 0.1, "r": 10, "batch": [5, 3]},
                                {"method": "two-loop-hia", "alpha": 0.1, "r": 10,
                                 "total_iters": 4, "eval_every": 2}],
                       seeds=[0, 1])
        config = load_config(write_config(tmp_path, doc))
        first, _ = run_experiment(config, out=tmp_path / "a")
        second, _ = run_experiment(config, out=tmp_path / "b", jobs=2)
        replay, _ = run_experiment(load_config(tmp_path / "a" / "manifest.json"),
                                   out=tmp_path / "c")
        assert metric_columns(first) == metric_columns(second) == metric_columns(replay)

    def test_divergence_is_recorded_and_run_continues(self, tmp_path):
        doc = make_doc(solvers=[{"method": "saba", "alpha": 50.0, "r": 1, "label": "wild"},
                                {"method": "saba", "alpha": 0.1, "r": 10}],
                       total_iters=200, eval_every=50)
        table, manifest = run_experiment(config_from_dict(doc), out=tmp_path)
        status = {c["method"]: c["status"] for c in manifest["cells"]}
        assert status == {"wild": "diverged", "saba": "ok"}
        wild = [r for r in table.rows if r.method == "wild"]
        assert all(r.status == "diverged" for r in wild)
        assert any(math.isnan(r.metric_value) for r in wild)
        assert summarize(table).excluded == {"wild": 1}

    def test_output_required(self):
        with pytest.raises(ConfigError, match="output"):
            run_experiment(config_from_dict(make_doc()))

    def test_task_metrics(self, tmp_path):
        problem = {"family": "hyperclean", "seed": 1,
                   "params": {"n_train": 30, "n_val": 20, "n_test": 20, "n_features": 4,
                              "num_classes": 3}}
        doc = make_doc(problem=problem, metrics="task")
        table, _ = run_experiment(config_from_dict(doc), out=tmp_path)
        assert {r.metric_name for r in table.rows} == {"test_error"}


class TestGrid:
    def test_degenerate_grid(self, tmp_path):
        doc = make_doc(grid={"alphas": [0.05], "rs": [2.0], "objective": "subopt"})
        report = run_gridsearch(config_from_dict(doc), out=tmp_path)
        best = report["methods"]["saba"]
        assert (best["alpha"], best["r"], best["beta"]) == (0.05, 2.0, 0.025)

    def test_full_grid_persisted(self, tmp_path):
        doc = make_doc(grid={"alphas": [0.01, 0.1, 100.0], "rs": [1.0, 10.0],
                             "objective": "subopt", "runs_per_cell": 2, "budget": 30})
        report = run_gridsearch(config_from_dict(doc), out=tmp_path)
        lines = (tmp_path / "grid.csv").read_text().splitlines()
        assert len(lines) == 1 + 3 * 2 * 2
        assert json.loads((tmp_path / "best.json").read_text()) == report
        assert report["methods"]["saba"]["alpha"] in (0.01, 0.1)
        assert "diverged" in (tmp_path / "grid.csv").read_text()

    def test_unknown_objective(self, tmp_path):
        doc = make_doc(grid={"alphas": [0.1], "rs": [1.0], "objective": "test_error"})
        with pytest.raises(ConfigError, match="grid.objective"):
            run_gridsearch(config_from_dict(doc), out=tmp_path)

    def test_missing_grid(self, tmp_path):
        with pytest.raises(ConfigError, match="grid"):
            run_gridsearch(config_from_dict(make_doc()), out=tmp_path)


class TestProblemsFromFiles:
    def test_cached_optimum_gives_subopt(self, tmp_path):
        problem = {"family": "toy-ridge", "seed": 0, "x0": 1.0}
        config = config_from_dict(make_doc(problem=problem))
        ref = cache_optimum(config, tmp_path / "opt.json")
        assert ref.metadata["grad_norm"] < 1e-8
        assert ReferenceOptimum.load(tmp_path / "opt.json").h_star == ref.h_star
        problem["reference"] = "opt.json"
        solvers = [{"method": "saba", "alpha": 0.01, "r": 10}]
        config = load_config(write_config(tmp_path, make_doc(problem=problem, solvers=solvers)))
        table, manifest = run_experiment(config, out=tmp_path / "out")
        assert manifest["cells"][0]["status"] == "ok"
        subopt = np.array([r.metric_value for r in table.rows if r.metric_name == "subopt"])
        assert len(subopt) == 3 and np.all(np.isfinite(subopt)) and subopt.min() > -1e-9

    def test_libsvm_files(self, tmp_path):
        rng = np.random.default_rng(0)
        for name, n in (("train.svm", 20), ("val.svm", 15)):
            ds = SparseDataset(rng.standard_normal((n, 4)), rng.choice([-1, 1], n))
            (tmp_path / name).write_text(serialize_libsvm(ds))
        spec = {"family": "logreg", "data": {"train": "train.svm", "val": "val.svm"}}
        problem = build_problem(spec, tmp_path)
        assert (problem.dims.n, problem.dims.m, problem.dims.p) == (20, 15, 4)

    def test_idx_files_from_data_dir(self, tmp_path, monkeypatch):
        def encode(arr):
            header = struct.pack(">HBB", 0, 0x08, arr.ndim) + struct.pack(f">{arr.ndim}I",
                                                                          *arr.shape)
            return header + arr.tobytes()

        rng = np.random.default_rng(0)
        (tmp_path / "img").write_bytes(encode(rng.integers(0, 256, (30, 3, 3), dtype=np.uint8)))
        (tmp_path / "lab").write_bytes(encode(rng.integers(0, 4, 30, dtype=np.uint8)))
        monkeypatch.setenv("BILEVELOPT_DATA_DIR", str(tmp_path))
        spec = {"family": "hyperclean", "seed": 0,
                "params": {"n_train": 20, "n_val": 10, "num_classes": 4, "p_corrupt": 0.5},
                "data": {"train_images": "img", "train_labels": "lab"}}
        problem = build_problem(spec, tmp_path / "elsewhere")
        assert (problem.dims.n, problem.dims.m, problem.dims.p) == (20, 10, 4 * 9)
        assert 0 < problem.corrupted.sum() < 20

    def test_missing_file(self, tmp_path):
        spec = {"family": "logreg", "data": {"train": "nope.svm", "val": "nope.svm"}}
        with pytest.raises(ConfigError, match="problem.data"):
            build_problem(spec, tmp_path)


class TestFetch:
    @pytest.fixture
    def source(self, tmp_path):
        src = tmp_path / "src" / "data.bin"
        src.parent.mkdir()
        src.write_bytes(b"payload")
        return src

    def test_trust_on_first_use(self, tmp_path, source):
        root = tmp_path / "cache"
        path = fetch_file(source.as_uri(), root)
        assert path.read_bytes() == b"payload"
        digest = json.loads((root / "checksums.json").read_text())["data.bin"]
        source.write_bytes(b"tampered")
        with pytest.raises(ChecksumError):
            fetch_file(source.as_uri(), root, force=True)
        assert path.read_bytes() == b"payload"
        assert json.loads((root / "checksums.json").read_text())["data.bin"] == digest

    def test_pinned_checksum(self, tmp_path, source):
        import hashlib

        good = hashlib.sha256(b"payload").hexdigest()
        assert fetch_data(source.as_uri(), tmp_path / "a", sha256=good)[0].exists()
        with pytest.raises(ChecksumError):
            fetch_data(source.as_uri(), tmp_path / "b", sha256="0" * 64)
        assert list((tmp_path / "b").iterdir()) == []

    def test_edited_local_copy_detected(self, tmp_path, source):
        path = fetch_file(source.as_uri(), tmp_path)
        path.write_bytes(b"edited")
        with pytest.raises(ChecksumError):
            fetch_file(source.as_uri(), tmp_path)

    def test_unknown_name(self):
        with pytest.raises(ValueError, match="unknown dataset"):
            fetch_data("cifar")


class TestMain:
    def test_run_and_summarize(self, tmp_path, capsys):
        cfg = write_config(tmp_path, make_doc(seeds=[0, 1], output="res"))
        assert main(["run", "--config", str(cfg), "--seed-offset", "10"]) == 0
        out = tmp_path / "res"
        assert sorted(p.name for p in (out / "cells").iterdir()) == [
            "saba-seed10.csv", "saba-seed11.csv"]
        assert main(["summarize", str(out / "results.csv"), "--out",
                     str(tmp_path / "curves.csv"), "--agg", "inf"]) == 0
        header = (tmp_path / "curves.csv").read_text().splitlines()[0]
        assert header == "method,t,oracle_calls,wall_time,metric_name,value,n_seeds"
        assert "2 cells" in capsys.readouterr().out

    def test_config_error_exit_code(self, tmp_path, capsys):
        doc = make_doc()
        doc["solvers"][0]["alpha"] = 0
        cfg = write_config(tmp_path, doc)
        assert main(["run", "--config", str(cfg), "--out", str(tmp_path)]) == 1
        assert "solvers[0].alpha" in capsys.readouterr().err

    def test_grid_and_cache(self, tmp_path, capsys):
        doc = make_doc(grid={"alphas": [0.1], "rs": [1.0], "objective": "h"})
        cfg = write_config(tmp_path, doc)
        assert main(["grid", "--config", str(cfg), "--out", str(tmp_path / "g")]) == 0
        assert "saba: alpha=0.1" in capsys.readouterr().out
        assert main(["cache-optimum", "--config", str(cfg), "--out",
                     str(tmp_path / "o.json")]) == 0
        assert json.loads(capsys.readouterr().out)["grad_norm"] < 1e-8

    def test_help(self, capsys):
        with pytest.raises(SystemExit) as info:
            main(["--help"])
        assert info.value.code == 0
        assert "fetch-data" in capsys.readouterr().out
