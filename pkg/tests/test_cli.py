import csv
import json
import subprocess
import sys

import pytest

from qpresponse.cli import bundled_configs, main


def load(path):
    return json.loads(path.read_text())


def test_bundled_configs_present():
    assert {"elliptic-linear", "elliptic-quadratic", "hyperbolic", "elliptic-sweep"} <= set(bundled_configs())


def test_run_then_verify(tmp_path):
    out = tmp_path / "lin"
    assert main(["run", "--config", "elliptic-linear", "--out", str(out)]) == 0
    rep = load(out / "report.json")
    assert rep["converged"] and rep["residual"] <= rep["residual_bound"]
    rows = list(csv.DictReader(open(out / "iterations.csv")))
    assert len(rows) == rep["m_final"] + 1
    assert main(["verify", "--config", "elliptic-linear", "--out", str(out)]) == 0
    checks = load(out / "verify.json")["checks"]
    assert {c["check"] for c in checks} == {"residual", "linear_oracle"}


def test_verify_rejects_tampered(tmp_path):
    out = tmp_path / "q"
    assert main(["run", "--config", "elliptic-quadratic", "--out", str(out)]) == 0
    assert main(["verify", "--config", "elliptic-quadratic", "--out", str(out)]) == 0
    doc = load(out / "report.json")
    doc["response"]["modes"][1]["re"][0] += 1e-5
    bad = tmp_path / "tampered.json"
    bad.write_text(json.dumps(doc))
    assert main(["verify", "--config", "elliptic-quadratic", "--out", str(tmp_path / "v"),
                 "--response", str(bad)]) == 5
    res = load(tmp_path / "v" / "verify.json")["checks"][0]
    assert res["value"] > res["bound"]


def test_run_is_deterministic(tmp_path):
    docs = []
    for tag in ("a", "b"):
        assert main(["run", "--config", "elliptic-quadratic", "--out", str(tmp_path / tag), "--seed", "3"]) == 0
        d = load(tmp_path / tag / "report.json")
        d.pop("timing")
        docs.append(json.dumps(d, sort_keys=True))
        docs.append((tmp_path / tag / "iterations.csv").read_text())
    assert docs[0] == docs[2] and docs[1] == docs[3]


def test_sweep_64_cells(tmp_path):
    out = tmp_path / "sw"
    assert main(["sweep", "--config", "elliptic-sweep", "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out / "cells.csv")))
    summary = load(out / "sweep.json")
    assert len(rows) == 64
    assert sum(float(r["excluded"]) for r in rows) == pytest.approx(summary["excluded_measure"], rel=1e-12, abs=0)
    assert sum(int(r["flagged"]) for r in rows) == summary["flagged_cells"]
    runs = list(csv.DictReader(open(out / "runs.csv")))
    assert len(runs) == 3 and summary["runs"]["converged"] + summary["runs"]["resonant"] + \
        summary["runs"]["diverged"] == 3


def test_sweep_threads_match_serial(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["sweep", "--config", "elliptic-sweep", "--out", str(a)]) == 0
    assert main(["sweep", "--config", "elliptic-sweep", "--out", str(b), "--threads", "2"]) == 0
    for name in ("cells.csv", "runs.csv"):
        assert (a / name).read_text() == (b / name).read_text()


def _config(tmp_path, **changes):
    from qpresponse.cli import _config_path
    doc = json.loads(_config_path("elliptic-linear").read_text())
    doc.update(changes)
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(doc))
    return str(p)


def test_resonant_exit_code(tmp_path, capsys):
    cfg = _config(tmp_path, epsilon=0.028125)
    assert main(["run", "--config", cfg, "--out", str(tmp_path)]) == 3
    assert "k=" in capsys.readouterr().err


def test_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"system": {"n": 2,}}')
    assert main(["run", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert "bad.json:1:" in capsys.readouterr().err
    assert main(["run", "--config", "no-such-config", "--out", str(tmp_path)]) == 2
    cfg = _config(tmp_path, epsilon={"lo": 0.0, "hi": 0.1, "cells": 4})
    assert main(["run", "--config", cfg, "--out", str(tmp_path)]) == 2


def test_other_commands(tmp_path):
    out = tmp_path / "o"
    assert main(["average", "--config", "hyperbolic", "--out", str(out)]) == 0
    spec = load(out / "average.json")["spectrum"]
    assert sorted(spec["re"]) == pytest.approx([-2.0, 1.0])
    assert main(["normal-form", "--config", "elliptic-quadratic", "--out", str(out)]) == 0
    nf = load(out / "normal_form.json")
    assert nf["h"]["deg_min"] == 2
    assert main(["bounds", "--config", "elliptic-quadratic", "--out", str(out), "--strict-ledger"]) == 0
    assert load(out / "bounds.json")["failures"] == []
    assert main(["reduce", "--config", "elliptic-linear", "--out", str(out)]) == 0
    assert load(out / "reduce.json")["plan"]["delta"] == 1


def test_reduce_second_order(tmp_path):
    K = 3
    const = lambda comp, val: {"k": [0], "alpha": comp, "re": val, "im": [0.0]}
    doc = {"reduce": {"kind": "second-order", "n": 1, "d": 1, "K": K, "omega": [1.0], "gamma": 0.5, "tau": 1.0,
                      "a": 1.0, "b": 2.0,
                      "F": [const([1, 0], [-4.0]), const([0, 1], [-0.1]),
                            {"k": [1], "alpha": [0, 0], "re": [0.5], "im": [0.0]},
                            {"k": [-1], "alpha": [0, 0], "re": [0.5], "im": [0.0]}],
                      "G": {"0": [const([2, 0], [1.0])]}}}
    p = tmp_path / "so.json"
    p.write_text(json.dumps(doc))
    out = tmp_path / "o"
    assert main(["reduce", "--config", str(p), "--out", str(out)]) == 0
    red = load(out / "reduce.json")
    assert sorted(red["doubled_spectrum"]["im"]) == pytest.approx([-2.0, 2.0])
    cfg = load(out / "reduced_config.json")
    assert cfg["system"]["n"] == 2 and cfg["system"]["a"] == 0.5
    cfg["epsilon"] = 1e-3
    (tmp_path / "run.json").write_text(json.dumps(cfg))
    assert main(["run", "--config", str(tmp_path / "run.json"), "--out", str(tmp_path / "r")]) == 0


def test_console_script():
    res = subprocess.run([sys.executable, "-m", "qpresponse.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "sweep" in res.stdout
