import json
import subprocess
import sys

import pytest

from spikelab.cli import config_hash, run


def _gs(out, *extra):
    return run(["groundstate", "--n", "1", "--out", str(out), *extra])


def test_groundstate_ok(tmp_path):
    assert _gs(tmp_path) == 0
    doc = json.loads((tmp_path / "result.json").read_text())
    assert doc["schema_version"] == 1
    assert doc["command"] == "groundstate"
    assert doc["config_hash"] == config_hash("groundstate", doc["config"])
    assert all(c["passed"] for c in doc["claims"])
    assert (tmp_path / "groundstate.csv").exists()


def test_csv_deterministic(tmp_path):
    assert _gs(tmp_path / "a") == 0
    assert _gs(tmp_path / "b") == 0
    a = (tmp_path / "a" / "groundstate.csv").read_bytes()
    assert a == (tmp_path / "b" / "groundstate.csv").read_bytes()


def test_usage_errors(tmp_path):
    assert run(["no-such-command"]) == 64
    assert run([]) == 64
    assert run(["groundstate", "--n", "two"]) == 64


def test_parameter_errors(tmp_path):
    assert run(["project", "--d", "3,4", "--out", str(tmp_path)]) == 2
    assert run(["groundstate", "--p", "0.5", "--out", str(tmp_path)]) == 2
    assert run(["groundstate", "--jobs", "0", "--out", str(tmp_path)]) == 2


def test_config_layering(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"schema_version": 1, "n": 1, "p": 5.0, "out": str(tmp_path / "cfg")}))
    assert run(["groundstate", "--config", str(cfg), "--p", "3"]) == 0
    doc = json.loads((tmp_path / "cfg" / "result.json").read_text())
    assert doc["config"]["p"] == 3.0 and doc["config"]["n"] == 1


def test_config_rejects_bad_schema(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"n": 1}))
    assert run(["groundstate", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    cfg.write_text(json.dumps({"schema_version": 1, "bogus": 1}))
    assert run(["groundstate", "--config", str(cfg), "--out", str(tmp_path)]) == 2


def test_env_out(tmp_path, monkeypatch):
    monkeypatch.setenv("SPIKELAB_OUT", str(tmp_path / "env"))
    assert run(["groundstate", "--n", "1"]) == 0
    assert (tmp_path / "env" / "result.json").exists()


def test_report_empty(tmp_path, capsys):
    assert run(["report", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "report.json").read_text())
    assert doc["n_checks"] == 0 and doc["gaps"] == []


def test_report_flags_corrupt(tmp_path):
    assert run(["curvature-fit", "--out", str(tmp_path / "fit")]) == 0
    (tmp_path / "bad").mkdir()
    (tmp_path / "bad" / "result.json").write_text("{not json")
    (tmp_path / "fit" / "curvature.csv").write_text("R,eps,I\n1,abc\n")
    assert run(["report", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "report.json").read_text())
    assert doc["n_unreadable"] >= 1
    assert [g["run"] for g in doc["gaps"]] == ["bad"]
    assert "GAP" in (tmp_path / "report.txt").read_text()


def test_console_script_module(tmp_path):
    r = subprocess.run([sys.executable, "-m", "spikelab.cli", "geometry-check",
                        "--points", "20", "--m", "1000", "--out", str(tmp_path)],
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert json.loads((tmp_path / "result.json").read_text())["command"] == "geometry-check"
