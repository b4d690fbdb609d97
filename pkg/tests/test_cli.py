import csv
import json
import math

import jsonschema
import pytest

from afred import cli

FAST = ["--n-eps", "4", "--n-dirs", "32", "--n-gamma", "4", "--levels", "6"]


def _report(tmp_path):
    return json.loads((tmp_path / "report.json").read_text())


def test_verify_toy_passes(tmp_path, capsys):
    code = cli.main(["verify", "--family", "toy-shrink", "--seed", "7", "--out-dir", str(tmp_path), *FAST])
    assert code == 0
    rep = _report(tmp_path)
    assert rep["passed"] and rep["failed"] == []
    assert len(rep["results"]["definition"]["conditions"]) == 11
    assert rep["config"]["seed"] == 7 and "out_dir" not in rep["config"]
    assert (tmp_path / "report.meta.json").exists()
    assert capsys.readouterr().out.startswith("PASS verify toy-shrink")


def test_verify_broken_exits_one(tmp_path):
    code = cli.main(["verify", "--family", "toy-shrink-broken", "--out-dir", str(tmp_path), *FAST])
    assert code == 1
    rep = _report(tmp_path)
    assert rep["passed"] is False and rep["failed"] == ["cokernel_bound"]


def test_reduce_csv_matches_closed_form(tmp_path):
    code = cli.main(["reduce", "--family", "toy-shrink", "--eps", "0.25", "--tau", "0.01",
                     "--k-grid", "-0.1:0.1:5", "--out-dir", str(tmp_path)])
    assert code == 0
    rows = list(csv.DictReader((tmp_path / "grid.csv").open()))
    assert list(rows[0]) == ["epsilon_0", "epsilon_1", "k_0", "f_0", "df_0_0", "residual", "iterations"]
    assert len(rows) == 5
    for r in rows:
        k = float(r["k_0"])
        assert float(r["f_0"]) == pytest.approx(1.25 * k * k - 0.01, abs=1e-12)
        assert float(r["df_0_0"]) == pytest.approx(2.5 * k, abs=1e-9)
    assert _report(tmp_path)["results"]["uncertified_points"] == 2


def test_reduce_record_mode_leaves_blank_rows(tmp_path):
    code = cli.main(["reduce", "--family", "toy-shrink", "--eps", "0.25", "--tau", "0.01", "--k-grid", "0.0,0.1",
                     "--beyond-plan", "record", "--out-dir", str(tmp_path)])
    assert code == 0
    rows = list(csv.reader((tmp_path / "grid.csv").open()))
    assert rows[2][3:] == ["", "", "", ""]


def test_zeros_toy(tmp_path):
    code = cli.main(["zeros", "--family", "toy-shrink", "--eps", "0.25", "--tau", "0.01", "--k-radius", "0.15",
                     "--out-dir", str(tmp_path)])
    assert code == 0
    assert _report(tmp_path)["passed"]


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"family": "toy-shrink", "seed": 3, "n_eps": 8}))
    args = cli.build_parser().parse_args(["verify", "--config", str(cfg), "--seed", "5"])
    out = cli.resolve_config(args)
    assert (out["seed"], out["n_eps"], out["tol"]) == (5, 8, 1e-10)


@pytest.mark.parametrize("argv", [
    ["verify"],
    ["verify", "--family", "toy-shrink", "--seed", "-1"],
    ["reduce", "--family", "toy-shrink", "--eps", "0.5"],
    ["reduce", "--family", "toy-shrink", "--eps", "0.25,0.01", "--k-grid", "0:1:3", "--k-grid", "0:1:3"],
    ["verify", "--family", "toy-shrink", "--family-param", "tau_max=1.0"],
])
def test_bad_configs_exit_two(tmp_path, argv):
    assert cli.main([*argv, "--out-dir", str(tmp_path)]) == 2
    assert not (tmp_path / "report.json").exists()


def test_unreadable_config_exits_two(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["verify", "--config", str(bad)]) == 2


def test_workers_from_environment(monkeypatch):
    args = cli.build_parser().parse_args(["verify", "--family", "toy-shrink"])
    monkeypatch.setenv("AFRED_WORKERS", "3")
    assert cli.resolve_config(args)["workers"] == 3
    monkeypatch.setenv("AFRED_WORKERS", "many")
    with pytest.raises(cli.ConfigError):
        cli.resolve_config(args)


def test_grid_spec_parsing():
    assert cli._grid_spec("-1:1:3") == [-1.0, 0.0, 1.0]
    assert cli._grid_spec("0.5,2") == [0.5, 2.0]
    assert cli._attach_values(["--k-grid", "-1:1:3", "--eps", "-0.5"]) == ["--k-grid=-1:1:3", "--eps=-0.5"]
    with pytest.raises(Exception):
        cli._grid_spec("0:1:0")


def test_dumps_encoding():
    text = cli.dumps({"a": [1.0, 0.1, float("nan")], "b": float("inf"), "c": [], "d": {"e": True}})
    assert json.loads(text) == {"a": [1.0, 0.1, "NaN"], "b": "Infinity", "c": [], "d": {"e": True}}
    assert "0.10000000000000001" in text
    assert cli.format_float(-math.inf) == '"-Infinity"'


def test_written_report_matches_schema(tmp_path):
    cli.main(["verify", "--family", "classical-parabola", "--out-dir", str(tmp_path), *FAST])
    jsonschema.validate(_report(tmp_path), cli.load_schema("report.schema.json"))


def test_reports_are_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        cli.main(["reduce", "--family", "squared-map", "--k-grid", "-0.05:0.05:3", "--k-grid", "0,0.02",
                  "--out-dir", str(d)])
    assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()
    assert (a / "grid.csv").read_bytes() == (b / "grid.csv").read_bytes()


def test_reduce_default_grid_for_large_kernel(tmp_path):
    code = cli.main(["reduce", "--family", "discrete-strip", "--eps", "0.5", "--out-dir", str(tmp_path)])
    assert code == 0
    rows = list(csv.reader((tmp_path / "grid.csv").open()))
    # dim K = 8: the origin plus two points per axis
    assert len(rows) == 1 + 17
