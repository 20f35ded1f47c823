import csv
import subprocess
import sys

import pytest
import yaml

from flowseir.cli import main
from flowseir.control import ControlPolicy
from flowseir.model import simulate
from flowseir.scenario import builtin_four_city, builtin_four_city_loaded, dump_scenario, read_run_table, to_document


@pytest.fixture
def scenario_file(tmp_path):
    path = tmp_path / "four.yaml"
    path.write_text(dump_scenario(builtin_four_city_loaded()))
    return path


def _write_doc(tmp_path, doc, name="edited.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(doc))
    return path


def test_validate_builtin(scenario_file, capsys):
    assert main(["validate", str(scenario_file)]) == 0
    assert "passed" in capsys.readouterr().out


def test_run_with_large_step_fails(tmp_path, capsys):
    doc = to_document(builtin_four_city_loaded())
    doc["params"]["h"] = 3.0
    path = _write_doc(tmp_path, doc)
    assert main(["run", str(path), "--horizon", "5"]) == 1
    err = capsys.readouterr().err
    assert "h*beta" in err
    assert main(["validate", str(path)]) == 1


def test_missing_file_is_io_error(tmp_path):
    assert main(["validate", str(tmp_path / "nope.yaml")]) == 3
    assert main(["run", str(tmp_path / "nope.yaml")]) == 3


@pytest.mark.parametrize("argv", [["frobnicate"], ["run"], ["validate", "x", "--bogus"], []])
def test_usage_errors(argv, capsys):
    assert main(argv) == 64
    assert "usage" in capsys.readouterr().err


def test_runtime_violation_exit(tmp_path):
    doc = to_document(builtin_four_city_loaded())
    doc["params"]["p_x"] = 1.0
    doc["initial"] = {"s": [0.5, 0.99, 1, 1], "e": [0, 0.005, 0, 0], "x": [0.5, 0.005, 0, 0], "r": [0, 0, 0, 0]}
    path = _write_doc(tmp_path, doc)
    assert main(["run", str(path), "--horizon", "3"]) == 2


def test_run_writes_outputs(scenario_file, tmp_path):
    out = tmp_path / "run.csv"
    assert main(["run", str(scenario_file), "--horizon", "40", "--out", str(out)]) == 0
    cols = read_run_table(out)
    assert cols["k"].size == 41 * 4
    assert (tmp_path / "run.summary.json").exists()


def test_run_prints_summary(scenario_file, capsys):
    assert main(["run", str(scenario_file), "--horizon", "10"]) == 0
    assert '"report"' in capsys.readouterr().out


def test_sweep_eta_zero_matches_uncontrolled(scenario_file, tmp_path, capsys):
    out = tmp_path / "sweep"
    code = main(["sweep", str(scenario_file), "--eta", "0,10", "--xi", "50,100", "--horizon", "300",
                 "--out", str(out)])
    assert code == 0
    with open(out / "index.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4
    for row in rows:
        assert (out / row["table"]).exists() and (out / row["summary"]).exists()
        assert float(row["gamma_axis"]) == float(row["xi"]) / 100

    base = simulate(builtin_four_city(100.0), ControlPolicy.none(), 300)
    cell = read_run_table(out / "eta=0.0_xi=100.0.csv")
    assert (cell["x"].reshape(301, 4) == base.x).all()
    assert (cell["theta"][:-4] == 1.0).all()
    assert "r_bar_final" in capsys.readouterr().out


def test_sweep_vaccine_grid_and_parallel(scenario_file, tmp_path, capsys):
    args = ["sweep", str(scenario_file), "--eta", "0,1000", "--xi", "100", "--horizon", "800", "--vaccine"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    out = capsys.readouterr().out
    assert out.startswith("burden")
    assert main(args + ["--out", str(tmp_path / "b"), "--jobs", "2"]) == 0
    for name in ("eta=0.0_xi=100.0.csv", "eta=1000.0_xi=100.0.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_builtin_prints_loadable_document(tmp_path, capsys):
    assert main(["builtin", "four-city", "--xi", "50"]) == 0
    text = capsys.readouterr().out
    path = tmp_path / "b.yaml"
    path.write_text(text)
    assert main(["validate", str(path)]) == 0
    assert yaml.safe_load(text)["flow"]["scale"] == 50.0


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "flowseir", "builtin", "four-city"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "format_version: 1" in proc.stdout
