import csv
import io
import json
import math

import numpy as np
import pytest
from click.testing import CliRunner

from longrun import acceptance
from longrun.cli import main
from longrun.schemas import validate

CESARO_10 = '{"kind": "cesaro", "horizon": 10}'


@pytest.fixture
def runner():
    return CliRunner()


def test_missing_problem_is_usage_error(runner):
    res = runner.invoke(main, ["simulate", "--y0", "0,0", "--horizon", "1"])
    assert res.exit_code == 2
    assert "--problem" in res.output


def test_unknown_problem_and_bad_state(runner):
    assert runner.invoke(main, ["simulate", "--problem", "nope", "--y0", "0,0", "--horizon", "1"]).exit_code == 2
    res = runner.invoke(main, ["simulate", "--problem", "toy_pollution", "--y0", "5,0", "--horizon", "1"])
    assert res.exit_code == 2 and "--y0" in res.output


def test_simulate_matches_closed_form(runner, tmp_path):
    res = runner.invoke(main, ["simulate", "--problem", "toy_pollution", "--y0", "0,0", "--u-index", "10",
                               "--horizon", "10", "--dt", "0.001", "--eval", CESARO_10, "--out", str(tmp_path)])
    assert res.exit_code == 0, res.output
    rows = list(csv.DictReader(io.StringIO((tmp_path / "trajectory.csv").read_text())))
    t = np.array([float(r["t"]) for r in rows])
    y2 = np.array([float(r["y2"]) for r in rows])
    assert t[-1] == pytest.approx(10.0)
    assert np.max(np.abs(y2 - (1 - np.exp(-t)))) <= 1e-6
    doc = json.loads((tmp_path / "simulation.json").read_text())
    validate("simulation", doc)
    assert doc["payoffs"][0]["payoff"] == pytest.approx(0.2000045, abs=1e-6)


def test_simulate_unit_cost(runner, tmp_path):
    evals = ['{"kind": "abel", "rate": 0.5}', CESARO_10, '{"kind": "atomic", "times": [0, 2], "weights": [0.5, 0.5]}']
    args = ["simulate", "--problem", "toy_pollution", "--param", "cost_constant=1", "--y0", "0,0",
            "--u-index", "4", "--horizon", "5"]
    for e in evals:
        args += ["--eval", e]
    res = runner.invoke(main, args)
    assert res.exit_code == 0, res.output
    rows = list(csv.DictReader(io.StringIO(res.output)))
    assert len(rows) == 3
    assert all(float(r["payoff"]) == pytest.approx(1.0, abs=1e-12) for r in rows)


def test_eval_from_file(runner, tmp_path):
    path = tmp_path / "eval.json"
    path.write_text(CESARO_10)
    res = runner.invoke(main, ["simulate", "--problem", "toy_pollution", "--y0", "0,0", "--horizon", "1",
                               "--eval", str(path)])
    assert res.exit_code == 0 and "cesaro(t=10)" in res.output
    bad = runner.invoke(main, ["simulate", "--problem", "toy_pollution", "--y0", "0,0", "--horizon", "1",
                               "--eval", '{"kind": "cesaro", "horizon": -1}'])
    assert bad.exit_code == 2


def _value(runner, tmp_path, name, *extra):
    out = tmp_path / name
    res = runner.invoke(main, ["value", "--quick", "--rho", "0.1", "--out", str(out), *extra])
    assert res.exit_code == 0, res.output
    text = out.read_text()
    doc = json.loads(text)
    validate("value", doc)
    return text, doc


def test_value_rotator(runner, tmp_path):
    text, doc = _value(runner, tmp_path, "a.json", "--problem", "rotator", "--y0", "1,0")
    assert doc["limit"]["estimate"] == pytest.approx(0.5, abs=0.02)
    assert doc["undiscounted"] == pytest.approx(0.5, abs=0.02)
    again, _ = _value(runner, tmp_path, "b.json", "--problem", "rotator", "--y0", "1,0")
    assert text == again


def test_value_toy(runner, tmp_path):
    _, doc = _value(runner, tmp_path, "a.json", "--problem", "toy_pollution", "--y0", "0,0", "--eval", CESARO_10)
    assert abs(doc["limit"]["estimate"]) <= max(doc["limit"]["band"], 1e-3)
    assert doc["values"][0]["value"] <= 0.2


def test_value_constant_cost(runner, tmp_path):
    _, doc = _value(runner, tmp_path, "a.json", "--problem", "toy_pollution", "--param", "cost_constant=0.3",
                    "--y0", "0.5,0.5", "--eval", CESARO_10, "--eval", '{"kind": "abel", "rate": 0.2}')
    reported = [v["value"] for v in doc["values"]] + [doc["limit"]["estimate"], doc["undiscounted"]]
    reported += [w["value"] for w in doc["weighted"]]
    assert reported == pytest.approx([0.3] * len(reported), abs=1e-12)


@pytest.mark.parametrize("problem,y0", [("toy_pollution", "0,0"), ("rotator", "1,0")])
def test_synthesize_and_verify(runner, tmp_path, problem, y0):
    out = tmp_path / "run"
    res = runner.invoke(main, ["synthesize", "--problem", problem, "--y0", y0, "--epsilon", "0.05",
                               "--out", str(out)])
    assert res.exit_code == 0, res.output
    cert = json.loads((out / "certificate.json").read_text())
    validate("certificate", cert)
    validate("control", json.loads((out / "control.json").read_text()))
    assert cert["passed"] and cert["worst_regular_gap"] <= 0.15
    args = ["verify", "--problem", problem, "--y0", y0, "--control", str(out / "control.json"),
            "--certificate", str(out / "certificate.json"), "--out", str(out / "again.json")]
    res = runner.invoke(main, args)
    assert res.exit_code == 0, res.output
    assert (out / "again.json").read_text() == (out / "certificate.json").read_text()
    # a tampered certificate is not reproduced
    cert["V_star"] += 0.01
    (out / "certificate.json").write_text(json.dumps(cert))
    assert runner.invoke(main, args).exit_code == 1


def test_synthesize_trivial(runner, tmp_path):
    res = runner.invoke(main, ["synthesize", "--problem", "toy_pollution", "--y0", "0,0", "--epsilon", "1",
                               "--out", str(tmp_path)])
    assert res.exit_code == 0
    assert json.loads((tmp_path / "certificate.json").read_text())["diagnostics"]["trivial"] is True


def test_accept_filter_runs_only_tv_criteria(runner):
    res = runner.invoke(main, ["accept", "--filter", "tv"])
    lines = [l for l in res.output.splitlines() if l.startswith(("PASS", "FAIL"))]
    assert [int(l.split("[")[1].split("]")[0]) for l in lines] == [1, 2, 3, 4]
    assert res.exit_code == (0 if all(l.startswith("PASS") for l in lines) else 1)


def test_accept_detects_corrupted_tv(runner, monkeypatch):
    real = acceptance.shift_tv
    monkeypatch.setattr(acceptance, "shift_tv", lambda theta, s: 0.9 * real(theta, s))
    res = runner.invoke(main, ["accept", "--filter", "1"])
    assert res.exit_code == 1
    assert res.output.startswith("FAIL [ 1]")


def test_accept_unknown_filter(runner):
    assert runner.invoke(main, ["accept", "--filter", "nothing-matches"]).exit_code == 2
