import json

import pytest

from cmdp_accel import gen_random_cmdp, save_cmdp
from cmdp_accel.cli import main

from conftest import one_state


@pytest.fixture
def instance(tmp_path):
    path = tmp_path / "x.json"
    save_cmdp(gen_random_cmdp(2, 4, 3, 1), path)
    return path


def test_solve_lp_writes_certificate(instance, capsys):
    assert main(["solve", "--instance", str(instance), "--solver", "lp"]) == 0
    cert = json.loads(instance.with_suffix(".certificate.json").read_text())
    assert cert["status"] == "optimal"
    assert json.loads(capsys.readouterr().out)["optimal_value"] == cert["optimal_value"]


def test_solve_pdo_and_arcpo_emit_traces(instance, tmp_path):
    out = tmp_path / "out"
    assert main(["solve", "--instance", str(instance), "--solver", "pdo", "--T", "30",
                 "--output-dir", str(out)]) == 0
    assert main(["solve", "--instance", str(instance), "--solver", "arcpo", "--epsilon", "0.3",
                 "--T", "20", "--output-dir", str(out)]) == 0
    summary = json.loads((out / "x.arcpo.json").read_text())
    assert summary["outer_iterations"] == 20
    assert len((out / "x.pdo.csv").read_text().splitlines()) == 31


def test_invalid_input_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"num_states": 1}))
    assert main(["solve", "--instance", str(bad)]) == 2
    assert "missing field" in capsys.readouterr().err
    assert main(["solve", "--instance", str(tmp_path / "nope.json")]) == 2
    assert main(["frobnicate"]) == 2
    assert main(["solve", "--threshold-fraction", "1.5"]) == 2


def test_infeasible_instance_is_a_solver_failure(tmp_path):
    path = tmp_path / "inf.json"
    save_cmdp(one_state((1.0, 0.0), gamma=0.5, constraint=(0.0, 1.0), threshold=3.0), path)
    assert main(["solve", "--instance", str(path)]) == 1


def test_check_smoothness(capsys):
    assert main(["check-smoothness", "--states", "4", "--actions", "2", "--constraints", "1",
                 "--taus", "0.1", "0.2", "--lines", "3"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "tau,estimate" and len(lines) == 3


def test_verify_and_plot(tmp_path, capsys):
    assert main(["verify", "--instances", "1"]) == 0
    assert "7/7 checks passed" in capsys.readouterr().out
    csv = tmp_path / "t.csv"
    csv.write_text("solver,outer_iter,oracle_calls,V0,gap,violation_l1,lambda_norm,lambda_step_norm\n"
                   "a,1,10,1,0.5,0.1,0,0\na,2,20,1,0.1,0.01,0,0\n")
    assert main(["plot", str(csv), "-o", str(tmp_path / "t.svg")]) == 0
    assert (tmp_path / "t.svg").read_text().startswith("<svg")
