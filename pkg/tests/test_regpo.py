import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cmdp_accel import ConfigurationError, iteration_budget, regpo_npg, regpo_softq, reward_stats, soft_bellman
from cmdp_accel.mdp import RewardStats, entropy_value, uniform_policy, values
from cmdp_accel.regpo import softmax_policy, soft_value

from conftest import one_state, random_cmdp


def regularized_value(cmdp, pi, lam, tau):
    v = values(cmdp, pi)
    return v[0] + lam @ v[1:] + tau * entropy_value(cmdp, pi)


def test_one_state_fixed_point_closed_form():
    # V = 1 + g tau log(e^{V/tau}... ) reduces to V = tau log(1 + e) / (1 - g).
    cmdp = one_state((1.0, 0.0), gamma=0.5)
    res = regpo_softq(cmdp, [], 1.0, 1e-12)
    v = soft_value(res.q_values, 1.0)[0]
    assert v == pytest.approx(2 * math.log(1 + math.e), abs=1e-10)
    assert res.policy[0, 0] == pytest.approx(math.e / (1 + math.e), abs=1e-12)


def test_budget_formula():
    stats = RewardStats(r_i_max=np.array([1.0, 1.0]), R_max=1.0, r_0_max=1.0)
    K = iteration_budget(stats, 0.9, 1e-4, 0.1, 2.0)
    want = math.ceil(math.log(2 * (1 + 2) / (0.1 * 1e-4 * 0.1)) / math.log(1 / 0.9))
    assert K == want


def test_budget_floors_at_zero_and_rejects_huge():
    stats = RewardStats(r_i_max=np.array([1e-9]), R_max=0.0, r_0_max=1e-9)
    assert iteration_budget(stats, 0.5, 1.0, 1.0, 1.0) == 0
    zero = RewardStats(r_i_max=np.array([0.0]), R_max=0.0, r_0_max=0.0)
    assert iteration_budget(zero, 0.9, 1e-3, 0.1, 1.0) == 0
    with pytest.raises(ConfigurationError):
        iteration_budget(RewardStats(np.array([1.0]), 0.0, 1.0), 1 - 1e-12, 1e-12, 1e-12, 1.0)
    with pytest.raises(ConfigurationError):
        iteration_budget(stats, 0.9, 1e-3, 0.0, 1.0)


def test_budget_mode_runs_exactly_K():
    cmdp = random_cmdp(0, m=1)
    K = iteration_budget(reward_stats(cmdp), cmdp.discount, 1e-5, 0.2, 1.0)
    assert regpo_softq(cmdp, [0.3], 0.2, 1e-5).iterations_used == K
    assert regpo_npg(cmdp, [0.3], 0.2, 1e-5).iterations_used == K + 1


@given(st.integers(0, 10_000), st.floats(0.05, 1.0))
def test_softq_is_a_gamma_contraction(seed, tau):
    cmdp = random_cmdp(seed, S=4, A=3, m=1)
    rng = np.random.default_rng(seed)
    q1, q2 = rng.normal(size=(2, 4, 3)) * 5
    lam = [rng.uniform(0, 2)]
    d_before = np.abs(q1 - q2).max()
    d_after = np.abs(soft_bellman(cmdp, lam, tau, q1) - soft_bellman(cmdp, lam, tau, q2)).max()
    assert d_after <= cmdp.discount * d_before + 1e-12


@pytest.mark.parametrize("delta", [1e-3, 1e-6])
def test_output_is_delta_accurate(delta):
    cmdp = random_cmdp(7, S=5, A=3, m=2)
    lam, tau = np.array([0.4, 1.1]), 0.1
    best = regpo_softq(cmdp, lam, tau, 1e-13).policy
    for solver in (regpo_softq, regpo_npg):
        pi = solver(cmdp, lam, tau, delta, B=1.1).policy
        gap = regularized_value(cmdp, best, lam, tau) - regularized_value(cmdp, pi, lam, tau)
        assert -1e-10 <= gap <= delta


def test_optimal_policy_beats_random_policies():
    cmdp = random_cmdp(2, S=4, A=3, m=1)
    lam, tau = np.array([0.7]), 0.3
    best = regularized_value(cmdp, regpo_softq(cmdp, lam, tau, 1e-12).policy, lam, tau)
    rng = np.random.default_rng(0)
    for _ in range(200):
        pi = rng.dirichlet(np.ones(3), size=4)
        assert regularized_value(cmdp, pi, lam, tau) <= best + 1e-10


def test_adaptive_mode_reaches_residual_target():
    cmdp = random_cmdp(4, m=1)
    tau, delta = 0.1, 1e-6
    budget = regpo_softq(cmdp, [0.5], tau, delta)
    adaptive = regpo_softq(cmdp, [0.5], tau, delta, mode="adaptive")
    assert adaptive.sup_norm_residual <= 0.5 * (1 - cmdp.discount) * delta * tau
    assert adaptive.iterations_used <= budget.iterations_used
    np.testing.assert_allclose(adaptive.policy, budget.policy, atol=delta)
    npg = regpo_npg(cmdp, [0.5], tau, delta, mode="adaptive")
    assert npg.sup_norm_residual <= 0.5 * (1 - cmdp.discount) * delta * tau
    np.testing.assert_allclose(npg.policy, budget.policy, atol=delta)


def test_warm_start_keeps_the_fixed_point():
    cmdp = random_cmdp(4, m=1)
    cold = regpo_softq(cmdp, [0.5], 0.1, 1e-8)
    warm = regpo_softq(cmdp, [0.5], 0.1, 1e-8, q_init=cold.q_values, mode="adaptive")
    assert warm.iterations_used < 5
    np.testing.assert_allclose(warm.policy, cold.policy, atol=1e-8)


def test_unknown_mode_and_bad_tau():
    cmdp = random_cmdp(0, m=0)
    with pytest.raises(ConfigurationError):
        regpo_softq(cmdp, [], 0.1, 1e-3, mode="fast")
    with pytest.raises(ConfigurationError):
        regpo_npg(cmdp, [], -0.1, 1e-3)


def test_softmax_helpers_are_stable():
    q = np.array([[1000.0, 999.0], [0.0, 0.0]])
    pi = softmax_policy(q, 0.5)
    np.testing.assert_allclose(pi.sum(axis=1), 1.0)
    assert np.isfinite(soft_value(q, 1e-3)).all()
    np.testing.assert_allclose(softmax_policy(np.zeros((3, 4)), 1.0), uniform_policy(random_cmdp(0, S=3, A=4)))
