import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from cmdp_accel import ConfigurationError, ExperimentSpec, benchmark, gen_random_cmdp, save_cmdp, slater_margin
from cmdp_accel.harness import (
    CSV_COLUMNS,
    default_jobs,
    first_reach,
    plot_csv,
    read_csv,
    run_experiment,
    verify,
    write_csv,
)
from cmdp_accel.oracle import max_value


def test_generator_is_deterministic():
    a = gen_random_cmdp(5, 6, 3, 2)
    b = gen_random_cmdp(5, 6, 3, 2)
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())
    assert json.dumps(gen_random_cmdp(6, 6, 3, 2).to_dict()) != json.dumps(a.to_dict())


def test_generator_thresholds_and_slater():
    for seed in range(5):
        cmdp = gen_random_cmdp(seed, 5, 3, 2, threshold_fraction=0.5)
        assert slater_margin(cmdp) >= 0
        raw = cmdp.with_thresholds([0.0, 0.0])
        np.testing.assert_allclose(cmdp.thresholds, [0.5 * max_value(raw, i) for i in (1, 2)])
        np.testing.assert_allclose(cmdp.initial_dist, 0.2)


def test_slater_margin_vanishes_as_fraction_approaches_one():
    # With one constraint the margin is exactly (1 - f) max V_1. With several,
    # thresholds near each individual maximum become jointly infeasible.
    base = gen_random_cmdp(1, 5, 3, 1, threshold_fraction=0.5).with_thresholds([0.0])
    top = max_value(base, 1)
    fracs = (0.5, 0.7, 0.9, 0.99, 0.999)
    margins = [slater_margin(base.with_thresholds([f * top])) for f in fracs]
    np.testing.assert_allclose(margins, [(1 - f) * top for f in fracs], rtol=1e-9)
    assert all(a > b > 0 for a, b in zip(margins, margins[1:]))


def test_generator_rejects_bad_parameters():
    with pytest.raises(ConfigurationError):
        gen_random_cmdp(0, 5, 3, 1, threshold_fraction=1.0)
    with pytest.raises(ConfigurationError):
        gen_random_cmdp(0, 0, 3, 1)


def test_generator_gives_up_after_retries():
    # Many constraints at 99.99% of their individual maxima cannot be met together.
    with pytest.raises(ConfigurationError, match="tries"):
        gen_random_cmdp(0, 3, 2, 6, threshold_fraction=0.9999, max_tries=2)


def test_csv_sorted_and_formatted(tmp_path):
    rows = [("b", 2, 20, 1.0, 0.1, 0.0, 1.0, 0.5), ("a", 1, 10, 1 / 3, 0.2, 0.1, 0.0, 0.0),
            ("b", 1, 10, 0.5, 0.3, 0.2, 0.5, 0.5)]
    text = write_csv(rows, tmp_path / "t.csv")
    lines = text.splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert lines[1] == "a,1,10,0.333333333333,0.2,0.1,0,0"
    assert [l.split(",")[:2] for l in lines[2:]] == [["b", "1"], ["b", "2"]]
    groups = read_csv(tmp_path / "t.csv")
    np.testing.assert_allclose(groups["b"]["oracle_calls"], [10, 20])
    assert first_reach(rows, "b", 0.15) == 20
    assert first_reach(rows, "a", 0.15) is None


def test_read_csv_rejects_other_schemas(tmp_path):
    path = tmp_path / "x.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(ConfigurationError):
        read_csv(path)


def test_plot_is_valid_svg(tmp_path):
    rows = [("s", t, 10 * t, 1.0, 1.0 / t, 0.5 / t, 0.0, 0.0) for t in range(1, 20)]
    write_csv(rows, tmp_path / "t.csv")
    svg = plot_csv(tmp_path / "t.csv", tmp_path / "t.svg", epsilon=0.05)
    root = ET.fromstring(svg)
    assert root.tag.endswith("svg")
    assert len([e for e in root.iter() if e.tag.endswith("polyline")]) == 2
    assert (tmp_path / "t.svg").read_text() == svg


@pytest.fixture(scope="module")
def small_benchmark():
    cmdp = gen_random_cmdp(3, 4, 3, 1)
    return cmdp, benchmark(cmdp, 0.2, etas=(0.01, 0.1, 1.0))


def test_benchmark_rows(small_benchmark):
    cmdp, res = small_benchmark
    solvers = {r[0] for r in res.rows}
    assert "arcpo" in solvers and len(solvers) == 7
    arc = [r for r in res.rows if r[0] == "arcpo"]
    assert len(arc) == res.arcpo_config.T
    pdo_calls = max(r[2] for r in res.rows if r[0] != "arcpo")
    # Each PDO run gets at least the AR-CPO budget, and less than one extra iteration.
    assert arc[-1][2] <= pdo_calls
    # The plain schedule only guarantees a gap of 5 epsilon.
    assert res.reach(5 * 0.2)["arcpo"] is not None


def test_benchmark_parallel_matches_serial(small_benchmark):
    cmdp, res = small_benchmark
    again = benchmark(cmdp, 0.2, etas=(0.01, 0.1, 1.0), jobs=2, arcpo_config=res.arcpo_config)
    assert write_csv(again.rows) == write_csv(res.rows)


def test_race_mode_stops_early(small_benchmark):
    cmdp, res = small_benchmark
    raced = benchmark(cmdp, 0.2, etas=(0.01, 0.1, 1.0), race=True, arcpo_config=res.arcpo_config)
    assert len(raced.rows) <= len(res.rows)
    assert raced.best_pdo(0.2) == res.best_pdo(0.2) or res.best_pdo(0.2) is None or \
        raced.best_pdo(0.2) is None


def test_run_experiment_writes_csv(tmp_path):
    cmdp = gen_random_cmdp(3, 4, 3, 1)
    save_cmdp(cmdp, tmp_path / "inst.json")
    spec = ExperimentSpec(instance=str(tmp_path / "inst.json"), epsilon=0.3, etas=(0.1,),
                          output_dir=str(tmp_path / "out"))
    (path,) = run_experiment(spec)
    assert path.read_text().startswith(",".join(CSV_COLUMNS))


def test_experiment_spec_validation():
    with pytest.raises(ConfigurationError):
        ExperimentSpec(jobs=0)
    with pytest.raises(ConfigurationError):
        ExperimentSpec(etas=())


def test_jobs_from_environment(monkeypatch):
    monkeypatch.delenv("CMDP_ACCEL_THREADS", raising=False)
    assert default_jobs() == 1
    monkeypatch.setenv("CMDP_ACCEL_THREADS", "3")
    assert default_jobs() == 3
    monkeypatch.setenv("CMDP_ACCEL_THREADS", "many")
    with pytest.raises(ConfigurationError):
        default_jobs()


def test_verify_suite_passes():
    results = verify(seeds=(0,))
    assert results and all(r.passed for r in results), [r for r in results if not r.passed]
