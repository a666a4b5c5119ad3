import numpy as np
import pytest

from cmdp_accel import ConfigurationError, PdoConfig, run_pdo, solve_cmdp_lp, values
from cmdp_accel.oracle import max_value

from conftest import random_cmdp


def instance():
    cmdp = random_cmdp(11, S=5, A=3, m=2)
    return cmdp.with_thresholds([0.6 * max_value(cmdp, i) for i in (1, 2)])


def test_update_rule():
    cmdp = instance()
    _, trace = run_pdo(cmdp, PdoConfig(T=5, eta=0.3))
    lam = np.zeros(2)
    for rec in trace.records:
        lam = np.maximum(lam - 0.3 * (rec.values[1:] - cmdp.thresholds), 0)
        np.testing.assert_allclose(rec.lam, lam, atol=1e-14)


def test_outputs_uniform_average_and_last_iterate():
    cmdp = instance()
    pi, trace = run_pdo(cmdp, PdoConfig(T=20, eta=0.1))
    avg = np.mean([r.values for r in trace.records], axis=0)
    np.testing.assert_allclose(values(cmdp, pi), avg, atol=1e-10)
    np.testing.assert_allclose(trace.records[-1].output_values, avg, atol=1e-12)
    np.testing.assert_allclose(values(cmdp, trace.last_policy), trace.records[-1].values, atol=1e-12)


def test_converges_on_small_instance():
    cmdp = instance()
    cert = solve_cmdp_lp(cmdp)
    _, trace = run_pdo(cmdp, PdoConfig(T=400, eta=0.1))
    assert abs(trace.gap(cert.optimal_value)) <= 0.05 and trace.violation() <= 0.05


def test_box_and_early_stop():
    cmdp = instance().with_thresholds([50.0, 50.0])
    _, trace = run_pdo(cmdp, PdoConfig(T=50, eta=1.0, box_B=0.5), stop=lambda r: r.t == 7)
    assert len(trace) == 7
    assert all(np.all(r.lam <= 1.0) for r in trace.records)
    assert trace.weights == pytest.approx(np.full(7, 1 / 7))


def test_config_validation():
    with pytest.raises(ConfigurationError):
        PdoConfig(T=10, eta=0.0)
    with pytest.raises(ConfigurationError):
        PdoConfig(T=10, eta=0.1, inner="x")
