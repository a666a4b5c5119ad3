"""Entropy-regularised inner policy optimisers (RegPO).

Both solvers return a delta-accurate maximiser of the entropy-regularised
value for the mixed reward r_lambda:

* :func:`regpo_softq` -- soft Q iteration, Q <- T_tau(Q) from Q_0 = 0.
* :func:`regpo_npg` -- natural policy gradient with stepsize (1-g)/tau, which
  for a softmax policy reduces to soft policy iteration
  pi_{k+1} ∝ exp(Q^{pi_k} / tau).

The default ``mode="budget"`` runs the fixed iteration count derived from the
accuracy target; ``mode="adaptive"`` stops as soon as the sup-norm Bellman
residual drops below (1-g) delta tau / 2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .errors import ConfigurationError
from .mdp import RewardStats, TabularCmdp, combined_reward, reward_stats, soft_q_eval

MAX_ITERATIONS = 10**9


@dataclass(frozen=True)
class RegpoResult:
    policy: np.ndarray
    q_values: np.ndarray
    iterations_used: int
    sup_norm_residual: float


def iteration_budget(stats: RewardStats, gamma: float, delta: float, tau: float, B: float) -> int:
    """Number of operator applications that guarantees a delta-accurate policy.

    K = ceil(log(2 (r_0max + B R_max) / ((1-g) delta tau)) / log(1/g)), floored at 0.
    """
    if tau <= 0 or delta <= 0 or B <= 0:
        raise ConfigurationError("tau, delta and B must all be > 0")
    numer = 2.0 * (stats.r_0_max + B * stats.R_max)
    if numer <= 0:
        return 0
    K = math.ceil(math.log(numer / ((1.0 - gamma) * delta * tau)) / math.log(1.0 / gamma))
    K = max(K, 0)
    if K > MAX_ITERATIONS:
        raise ConfigurationError(
            f"iteration budget K={K} exceeds {MAX_ITERATIONS}; increase delta * tau")
    return K


def soft_value(q: np.ndarray, tau: float) -> np.ndarray:
    """Row-wise tau * log sum_a exp(q[s, a] / tau), shifted by the row max."""
    qmax = q.max(axis=1)
    return qmax + tau * np.log(np.exp((q - qmax[:, None]) / tau).sum(axis=1))


def softmax_policy(q: np.ndarray, tau: float) -> np.ndarray:
    z = np.exp((q - q.max(axis=1, keepdims=True)) / tau)
    return z / z.sum(axis=1, keepdims=True)


def _check_tau(tau):
    if not tau > 0:
        raise ConfigurationError(f"tau must be > 0, got {tau}")


def soft_bellman(cmdp: TabularCmdp, lam, tau: float, q) -> np.ndarray:
    """Apply the soft Bellman operator once:
    T(Q)(s, a) = r_lambda(s, a) + g E_{s'}[tau log sum_a' exp(Q(s', a') / tau)].

    A floating ``q`` keeps its dtype, so np.longdouble input is evaluated in
    extended precision.
    """
    _check_tau(tau)
    r_lam = combined_reward(cmdp, lam)
    q = np.asarray(q)
    if not np.issubdtype(q.dtype, np.floating):
        q = q.astype(float)
    return r_lam + cmdp.discount * (cmdp.transition @ soft_value(q, tau))


class SoftBellman:
    """Pre-bound operator for repeated application with fixed (r_lambda, tau).

    Flattens the kernel once; callers in tight loops use this instead of
    :func:`soft_bellman`.
    """

    def __init__(self, cmdp: TabularCmdp, r_lam: np.ndarray, tau: float):
        _check_tau(tau)
        S, A = cmdp.num_states, cmdp.num_actions
        self.shape = (S, A)
        self.P = cmdp.transition.reshape(S * A, S)
        self.r = r_lam.reshape(S * A)
        self.gamma = cmdp.discount
        self.tau = tau

    def __call__(self, q):
        v = soft_value(q, self.tau)
        return (self.r + self.gamma * (self.P @ v)).reshape(self.shape)


@numba.njit(cache=True)
def _soft_bellman_flat(P, r, gamma, tau, A, q, out):
    S = P.shape[1]
    v = np.empty(S)
    for s in range(S):
        mx = q[s * A]
        for a in range(1, A):
            if q[s * A + a] > mx:
                mx = q[s * A + a]
        acc = 0.0
        for a in range(A):
            acc += np.exp((q[s * A + a] - mx) / tau)
        v[s] = mx + tau * np.log(acc)
    for i in range(P.shape[0]):
        acc = 0.0
        for j in range(S):
            acc += P[i, j] * v[j]
        out[i] = r[i] + gamma * acc


@numba.njit(cache=True)
def _soft_q_iterate(P, r, gamma, tau, A, q0, max_steps, stop):
    """Iterate Q <- T(Q) from q0.

    Runs exactly ``max_steps`` applications when ``stop < 0``; otherwise stops
    at the first iterate whose residual ||T(Q) - Q||_inf is <= stop. Returns
    (Q, steps taken, residual of the returned Q).
    """
    q = q0.copy()
    nxt = np.empty_like(q)
    steps = 0
    while True:
        _soft_bellman_flat(P, r, gamma, tau, A, q, nxt)
        res = 0.0
        for i in range(q.shape[0]):
            d = abs(nxt[i] - q[i])
            if d > res:
                res = d
        if stop >= 0.0:
            if res <= stop or steps >= max_steps:
                return q, steps, res
        elif steps >= max_steps:
            return q, steps, res
        q, nxt = nxt, q
        steps += 1


def _adaptive_cap(budget):
    # The residual target implies accuracy delta; the fixed budget K already
    # guarantees it, so a run needing many times K is stuck at round-off.
    return 10 * budget + 100


def _resolve_budget(cmdp, tau, delta, stats, B):
    if stats is None:
        stats = reward_stats(cmdp)
    return iteration_budget(stats, cmdp.discount, delta, tau, B)


def regpo_softq(cmdp: TabularCmdp, lam, tau: float, delta: float, stats: RewardStats = None,
                B: float = 1.0, mode: str = "budget", q_init=None) -> RegpoResult:
    _check_tau(tau)
    budget = _resolve_budget(cmdp, tau, delta, stats, B)
    S, A = cmdp.num_states, cmdp.num_actions
    q0 = np.zeros(S * A) if q_init is None else np.array(q_init, dtype=float).reshape(S * A)
    P = np.ascontiguousarray(cmdp.transition.reshape(S * A, S))
    r = np.ascontiguousarray(combined_reward(cmdp, lam).reshape(S * A))
    if mode == "budget":
        q, used, residual = _soft_q_iterate(P, r, cmdp.discount, tau, A, q0, budget, -1.0)
    elif mode == "adaptive":
        stop = 0.5 * (1.0 - cmdp.discount) * delta * tau
        q, used, residual = _soft_q_iterate(P, r, cmdp.discount, tau, A, q0, _adaptive_cap(budget), stop)
        if residual > stop:
            raise ConfigurationError("adaptive RegPO-SoftQ did not reach its residual target")
    else:
        raise ConfigurationError(f"unknown RegPO mode {mode!r}")
    q = q.reshape(S, A)
    return RegpoResult(softmax_policy(q, tau), q, int(used), float(residual))


def regpo_npg(cmdp: TabularCmdp, lam, tau: float, delta: float, stats: RewardStats = None,
              B: float = 1.0, mode: str = "budget", q_init=None) -> RegpoResult:
    """Tabular NPG with stepsize (1-g)/tau, starting from theta_0 = 0 (uniform policy).

    Budget mode performs the K+1 updates k = 0..K; ``iterations_used`` counts
    the policy evaluations. ``q_init`` seeds the starting policy as
    softmax(q_init / tau).
    """
    _check_tau(tau)
    budget = _resolve_budget(cmdp, tau, delta, stats, B)
    S, A = cmdp.num_states, cmdp.num_actions
    pi = np.full((S, A), 1.0 / A) if q_init is None else softmax_policy(np.asarray(q_init, float), tau)
    op = SoftBellman(cmdp, combined_reward(cmdp, lam), tau)

    def update(pi):
        q = soft_q_eval(cmdp, pi, lam, tau)
        return softmax_policy(q, tau), q

    if mode == "budget":
        for _ in range(budget + 1):
            pi, q = update(pi)
        used = budget + 1
    elif mode == "adaptive":
        stop = 0.5 * (1.0 - cmdp.discount) * delta * tau
        used = 0
        while True:
            pi, q = update(pi)
            used += 1
            if float(np.max(np.abs(op(q) - q))) <= stop:
                break
            if used >= _adaptive_cap(budget):
                raise ConfigurationError("adaptive RegPO-NPG did not reach its residual target")
    else:
        raise ConfigurationError(f"unknown RegPO mode {mode!r}")
    return RegpoResult(pi, q, used, float(np.max(np.abs(op(q) - q))))


INNER_SOLVERS = {"softq": regpo_softq, "npg": regpo_npg}
