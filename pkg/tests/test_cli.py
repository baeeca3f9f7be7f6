import csv
import json

import pytest

from reentry.cli import main, parse_grid
from reentry.config import load_document, parse_document
from reentry.state import ConfigError


def test_check_default_scenario_passes(tmp_path, capsys):
    assert main(["check", "scenarios/k3p3-default", "--samples", "100"]) == 0
    assert "small_gain" in capsys.readouterr().out


def test_check_fails_when_coupling_too_strong(tmp_path):
    path = tmp_path / "strong.json"
    path.write_text(json.dumps({"version": 1, "scenario": "k3p3-default", "overrides": {"k": 1.0}}))
    assert main(["check", str(path), "--samples", "100"]) == 1


def test_check_json_output(tmp_path):
    out = tmp_path / "r.json"
    assert main(["check", "k3p3-valuation", "--format", "json", "--out", str(out), "--samples", "100"]) == 0
    rep = json.loads(out.read_text())
    assert rep["small_gain_ok"] is True


def test_config_errors_exit_2(tmp_path, capsys):
    assert main(["check", str(tmp_path / "missing.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text('{"version": 1,\n "scenario": "k3p3-default",\n  oops}')
    assert main(["check", str(bad)]) == 2
    assert "bad.json:3:" in capsys.readouterr().err
    extra = tmp_path / "extra.json"
    extra.write_text(json.dumps({"version": 1, "scenario": "k3p3-default", "colour": "red"}))
    assert main(["check", str(extra)]) == 2
    assert main(["check", "k3p3-default", "--require", "nonsense"]) == 2


def test_simulate_zero_steps_is_header_only(tmp_path):
    out = tmp_path / "t.csv"
    assert main(["simulate", "k3p3-default", "--steps", "0", "--out", str(out)]) == 0
    lines = out.read_text().strip().splitlines()
    assert len(lines) == 1 and lines[0].startswith("t")
    assert (tmp_path / "t.csv.config.json").exists()


def test_simulate_resume_matches_single_run(tmp_path):
    a, b, c = tmp_path / "a.csv", tmp_path / "b.csv", tmp_path / "c.csv"
    ck = tmp_path / "ck.json"
    assert main(["simulate", "k3p3-default", "--steps", "60", "--out", str(a)]) == 0
    assert main(["simulate", "k3p3-default", "--steps", "25", "--out", str(b), "--checkpoint", str(ck)]) == 0
    assert main(["simulate", "k3p3-default", "--steps", "35", "--out", str(c), "--resume", str(ck)]) == 0
    last_full = a.read_text().strip().splitlines()[-1]
    last_resumed = c.read_text().strip().splitlines()[-1]
    assert last_full == last_resumed


def test_emit_roundtrip(tmp_path):
    out = tmp_path / "full.json"
    assert main(["emit", "k3p3-valuation", "--out", str(out)]) == 0
    assert main(["check", str(out), "--samples", "100"]) == 0
    doc = load_document(str(out))
    assert doc.scenario is None and doc.cfg.T == 3


def test_sweep_flags_small_gain_flip(tmp_path):
    out = tmp_path / "s.csv"
    rc = main(["sweep", "k3p3-default", "--grid", "k=0.05,1.5", "--grid", "tau=0,0.002",
               "--steps", "200", "--tol", "1", "--samples", "50", "--out", str(out)])
    assert rc == 0
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 4
    by_k = {float(r["k"]): r["small_gain_ok"] for r in rows}
    assert by_k[0.05] == "True" and by_k[1.5] == "False"


def test_sweep_empty_grid_and_cap(tmp_path):
    out = tmp_path / "e.csv"
    assert main(["sweep", "k3p3-default", "--grid", "k=", "--out", str(out)]) == 0
    assert len(out.read_text().strip().splitlines()) == 1
    assert main(["sweep", "k3p3-default", "--grid", "k=" + ",".join(["0.1"] * 70)]) == 2


def test_grid_parsing():
    assert parse_grid(["tau=0,0.5", "k=0.1"]) == {"tau": [0.0, 0.5], "k": [0.1]}
    with pytest.raises(ConfigError):
        parse_grid(["beta=1"])
    with pytest.raises(ConfigError):
        parse_grid(["k=a"])


def test_document_validation():
    with pytest.raises(ConfigError):
        parse_document({"version": 2, "scenario": "k3p3-default"})
    with pytest.raises(ConfigError):
        parse_document({"version": 1, "scenario": "k3p3-default", "run": {"steps": -1}})
    with pytest.raises(ConfigError):
        parse_document({"version": 1, "overrides": {"k": 1}})
    doc = parse_document({"version": 1, "scenario": "k3p3-default", "overrides": {"tau": 0.5}})
    assert doc.cfg.tau_RL == 0.5 and doc.cfg.tau_LR == 0.5
