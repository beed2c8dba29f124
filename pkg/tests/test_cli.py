import csv
import io as _io
import json
import shutil

import pytest

from quasidelta import cli
from quasidelta.io import read_csv_body

from conftest import ROOT

MANIFESTS = ROOT / "manifests"


def _rows(path):
    return list(csv.DictReader(_io.StringIO(read_csv_body(path))))


def _run(command, manifest, out):
    return cli.main([command, "--manifest", str(manifest), "--out", str(out), "--threads", "1"])


def _write(tmp_path, obj, name="m.json"):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return p


def test_spectrum_dirichlet_interval(tmp_path):
    assert _run("spectrum", MANIFESTS / "dirichlet_spectrum.json", tmp_path) == 0
    rows = _rows(tmp_path / "spectrum.csv")
    assert [float(r["eigenvalue"]) for r in rows[:3]] == pytest.approx([1, 4, 9], rel=1e-5)
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["status"] == "ok" and report["result"]["nonresonance"] == "FLAG"


def test_gauge_check_star(tmp_path):
    assert _run("gauge-check", MANIFESTS / "star_gauge.json", tmp_path) == 0
    rows = _rows(tmp_path / "spectrum.csv")
    assert rows and all(float(r["residual"]) <= 1e-10 for r in rows)
    assert all(float(r["relative_difference"]) <= 1e-10 for r in rows)


def test_missing_delta_is_schema_error(tmp_path):
    m = _write(tmp_path, {"graph": {"vertices": ["v"], "edges": [
        {"id": "e1", "length": 1, "ends": [None, "v"]}, {"id": "e2", "length": 1, "ends": [None, "v"]}]}})
    assert _run("spectrum", m, tmp_path / "out") == cli.EXIT_SCHEMA
    rec = json.loads((tmp_path / "out" / "report.json").read_text())
    assert rec["field"] == "graph.delta" and rec["code"] == 2


@pytest.mark.parametrize("manifest,field", [
    ({"graph": {"edges": [{"id": "e", "length": 1, "ends": [None, None]}]}, "numerics": {"elements": 0}},
     "numerics.elements"),
    ({"graph": {"edges": [{"id": "e", "length": 1, "ends": [None, None]}]}, "numerics": {"elements": 5000}},
     "numerics.elements"),
    ({"graph": {"edges": [{"id": "e", "length": -1, "ends": [None, None]}]}}, "graph.edges[0].length"),
    ({"command": "evolve", "graph": {"edges": []}}, "command"),
    ({"graph": "missing.json"}, "graph"),
    ({}, "graph"),
])
def test_schema_errors(tmp_path, manifest, field):
    assert _run("spectrum", _write(tmp_path, manifest), tmp_path / "out") == 2
    assert json.loads((tmp_path / "out" / "report.json").read_text())["field"] == field


def test_invalid_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert _run("spectrum", p, tmp_path / "out") == 2


def test_numerical_failure_exit_code(tmp_path):
    m = json.loads((MANIFESTS / "star_control.json").read_text())
    m["graph"] = json.loads((ROOT / "graphs" / "two_star.json").read_text())
    m["potential"] = {"chi_bar": {"v": {"e1": 0.0, "e2": 0.0}}}
    m["numerics"]["elements"] = 10
    assert _run("control", _write(tmp_path, m), tmp_path / "out") == cli.EXIT_NUMERIC
    rec = json.loads((tmp_path / "out" / "report.json").read_text())
    assert rec["error"] == "SynthesisError" and "coupling" in rec["message"]


def test_missing_potential_for_gauge_check(tmp_path):
    m = {"graph": json.loads((ROOT / "graphs" / "two_star.json").read_text())}
    assert _run("gauge-check", _write(tmp_path, m), tmp_path / "out") == 2


def test_evolve_trajectory(tmp_path):
    assert _run("evolve", MANIFESTS / "star_evolve.json", tmp_path) == 0
    rows = _rows(tmp_path / "trajectory.csv")
    assert float(rows[0]["t"]) == 0.0 and float(rows[-1]["t"]) == pytest.approx(1.0)
    assert all(abs(float(r["norm_M"]) - 1) < 1e-10 for r in rows)
    rep = json.loads((tmp_path / "report.json").read_text())["result"]
    assert rep["norm_drift"] < 1e-10


def test_stability_csv(tmp_path):
    assert _run("stability", MANIFESTS / "star_stability.json", tmp_path) == 0
    rows = _rows(tmp_path / "stability.csv")
    assert [int(r["n"]) for r in rows] == [4, 8, 16, 32]
    for r in rows:
        assert float(r["lhs_plus_minus"]) <= float(r["fitted_L"]) * float(r["rhs"]) * (1 + 1e-12)


def test_threads_validation(tmp_path):
    with pytest.raises(SystemExit):
        cli.main(["spectrum", "--manifest", "x", "--out", str(tmp_path), "--threads", "0"])


@pytest.mark.parametrize("command,manifest,csvname", [
    ("spectrum", "star_spectrum.json", "spectrum.csv"),
    ("gauge-check", "star_gauge.json", "spectrum.csv"),
    ("evolve", "star_evolve.json", "trajectory.csv"),
    ("stability", "star_stability.json", "stability.csv"),
])
def test_repeat_runs_are_byte_identical(tmp_path, command, manifest, csvname):
    bodies = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        assert _run(command, MANIFESTS / manifest, out) == 0
        bodies.append(read_csv_body(out / csvname).encode())
        bodies.append((out / "report.json").read_bytes())
    assert bodies[0] == bodies[2] and bodies[1] == bodies[3]


def test_console_script_installed():
    assert shutil.which("quasidelta") is not None
