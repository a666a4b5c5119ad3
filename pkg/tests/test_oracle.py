import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import linprog

from cmdp_accel import (
    ConfigurationError,
    Infeasible,
    enumerate_deterministic,
    max_value,
    slater_margin,
    solve_cmdp_lp,
    values,
)
from cmdp_accel.oracle import extract_policy, flow_constraints

from conftest import one_state, random_cmdp


def scipy_value(cmdp):
    A_eq, b_eq = flow_constraints(cmdp)
    m = cmdp.num_constraints
    n = A_eq.shape[1]
    kw = {}
    if m:
        kw = dict(A_ub=-cmdp.rewards[1:].reshape(m, n), b_ub=-(1 - cmdp.discount) * cmdp.thresholds)
    res = linprog(-cmdp.rewards[0].ravel(), A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs", **kw)
    return None if res.status == 2 else -res.fun / (1 - cmdp.discount)


def test_binding_one_state_instance():
    # max a/(1-g) s.t. (1-a)/(1-g) >= 1 with g = 0.5 -> a = 1/2, V* = 1.
    cmdp = one_state((1.0, 0.0), gamma=0.5, constraint=(0.0, 1.0), threshold=1.0)
    cert = solve_cmdp_lp(cmdp)
    assert cert.optimal_value == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(cert.optimal_policy, [[0.5, 0.5]], atol=1e-12)
    np.testing.assert_allclose(cert.constraint_values, [1.0], atol=1e-12)
    # Slater: best slack max_a (2(1-a) - 1) = 1 at a = 0.
    assert cert.slater_margin == pytest.approx(1.0)
    assert cert.dual_objective == pytest.approx(cert.optimal_value, abs=1e-12)


@given(st.integers(0, 10_000), st.integers(0, 3), st.floats(0.1, 0.9))
def test_matches_scipy(seed, m, frac):
    cmdp = random_cmdp(seed, S=4, A=3, m=m)
    cmdp = cmdp.with_thresholds([frac * max_value(cmdp, i) for i in range(1, m + 1)])
    cert = solve_cmdp_lp(cmdp)
    ref = scipy_value(cmdp)
    if ref is None:
        assert not cert.feasible
        return
    assert cert.optimal_value == pytest.approx(ref, abs=1e-8)
    # The extracted policy attains the LP value and is feasible.
    v = values(cmdp, cert.optimal_policy)
    assert v[0] == pytest.approx(cert.optimal_value, abs=1e-8)
    assert np.all(v[1:] >= cmdp.thresholds - 1e-8)
    assert cert.feasibility_residual <= 1e-10


def test_infeasible_instance():
    cmdp = one_state((1.0, 0.0), gamma=0.5, constraint=(0.0, 1.0), threshold=3.0)
    out = solve_cmdp_lp(cmdp)
    assert isinstance(out, Infeasible) and not out.feasible
    assert out.slater_margin == pytest.approx(-1.0)
    assert json.loads(out.to_json())["status"] == "infeasible"


def test_certificate_json(small):
    cert = solve_cmdp_lp(small)
    data = json.loads(cert.to_json())
    assert data["status"] == "optimal"
    assert data["optimal_value"] == cert.optimal_value
    assert np.array(data["optimal_policy"]).shape == (4, 3)


@given(st.integers(0, 10_000))
def test_unconstrained_lp_equals_best_deterministic(seed):
    cmdp = random_cmdp(seed, S=4, A=3, m=0)
    assert solve_cmdp_lp(cmdp).optimal_value == pytest.approx(enumerate_deterministic(cmdp), abs=1e-8)


def test_constrained_lp_dominates_deterministic(small):
    cmdp = small.with_thresholds([0.5 * max_value(small, i) for i in (1, 2)])
    best_det = enumerate_deterministic(cmdp)
    assert best_det is None or solve_cmdp_lp(cmdp).optimal_value >= best_det - 1e-10


def test_enumeration_limit(small):
    with pytest.raises(ConfigurationError):
        enumerate_deterministic(small, limit=10)


def test_slater_margin_without_constraints():
    assert slater_margin(random_cmdp(0, m=0)) == float("inf")


def test_slater_margin_shrinks_as_thresholds_rise(small):
    top = np.array([max_value(small, i) for i in (1, 2)])
    margins = [slater_margin(small.with_thresholds(f * top)) for f in (0.2, 0.5, 0.8, 0.95)]
    assert all(a > b for a, b in zip(margins, margins[1:]))


def test_extract_policy_unvisited_state_is_uniform():
    nu = np.array([[0.3, 0.7], [0.0, 0.0]])
    np.testing.assert_allclose(extract_policy(nu), [[0.3, 0.7], [0.5, 0.5]])
