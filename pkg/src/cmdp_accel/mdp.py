"""Tabular constrained MDPs and exact policy evaluation.

Everything here is evaluated with dense linear solves, so values are exact up
to floating point. Arrays follow one layout throughout the package:

* ``transition[s, a, s']`` -- probability of moving to ``s'``
* ``rewards[i, s, a]`` -- reward ``i``; index 0 is the objective,
  indices ``1..m`` are the constraint utilities
* policies are ``(S, A)`` row-stochastic matrices
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidCmdpError, InvalidPolicyError, SolverError

# Module-level tolerances; callers may pass their own where a function accepts `atol`.
STOCHASTIC_ATOL = 1e-12
OCCUPANCY_ATOL = 1e-10
ZERO_MASS = 1e-14


def _readonly(x):
    arr = np.array(x, dtype=float, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TabularCmdp:
    """A finite CMDP: maximise V_0 subject to V_i >= c_i for i = 1..m."""

    transition: np.ndarray
    rewards: np.ndarray
    thresholds: np.ndarray
    discount: float
    initial_dist: np.ndarray

    def __post_init__(self):
        P = _readonly(self.transition)
        r = _readonly(self.rewards)
        c = _readonly(self.thresholds).reshape(-1)
        rho = _readonly(self.initial_dist).reshape(-1)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "rewards", r)
        object.__setattr__(self, "thresholds", c)
        object.__setattr__(self, "initial_dist", rho)
        object.__setattr__(self, "discount", float(self.discount))
        _validate(self)

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def num_constraints(self) -> int:
        return self.rewards.shape[0] - 1

    def with_thresholds(self, thresholds) -> "TabularCmdp":
        return TabularCmdp(self.transition, self.rewards, thresholds, self.discount, self.initial_dist)

    def to_dict(self) -> dict:
        return {
            "num_states": self.num_states,
            "num_actions": self.num_actions,
            "discount": self.discount,
            "initial_dist": self.initial_dist.tolist(),
            "transition": self.transition.tolist(),
            "rewards": self.rewards.tolist(),
            "thresholds": self.thresholds.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TabularCmdp":
        required = ("num_states", "num_actions", "discount", "initial_dist",
                    "transition", "rewards", "thresholds")
        for key in required:
            if key not in data:
                raise InvalidCmdpError(f"missing field {key!r}")
        S, A = data["num_states"], data["num_actions"]
        for key in ("num_states", "num_actions"):
            v = data[key]
            if not isinstance(v, int) or isinstance(v, bool) or v <= 0:
                raise InvalidCmdpError(f"{key} must be a positive integer, got {v!r}")
        try:
            P = np.asarray(data["transition"], dtype=float)
            r = np.asarray(data["rewards"], dtype=float)
        except (TypeError, ValueError) as exc:
            raise InvalidCmdpError(f"ragged or non-numeric array: {exc}") from None
        if P.shape != (S, A, S):
            raise InvalidCmdpError(f"transition has shape {P.shape}, expected {(S, A, S)}")
        if r.ndim != 3 or r.shape[1:] != (S, A):
            raise InvalidCmdpError(f"rewards has shape {r.shape}, expected (m+1, {S}, {A})")
        return cls(P, r, data["thresholds"], data["discount"], data["initial_dist"])


def _validate(cmdp: TabularCmdp):
    P, r, c, rho, gamma = (cmdp.transition, cmdp.rewards, cmdp.thresholds,
                           cmdp.initial_dist, cmdp.discount)
    if P.ndim != 3 or P.shape[0] != P.shape[2] or 0 in P.shape:
        raise InvalidCmdpError(f"transition must have shape (S, A, S), got {P.shape}")
    S, A = P.shape[:2]
    if r.ndim != 3 or r.shape[1:] != (S, A) or r.shape[0] < 1:
        raise InvalidCmdpError(f"rewards must have shape (m+1, {S}, {A}), got {r.shape}")
    m = r.shape[0] - 1
    if c.shape != (m,):
        raise InvalidCmdpError(f"thresholds must have length m={m}, got {c.shape[0]}")
    if rho.shape != (S,):
        raise InvalidCmdpError(f"initial_dist must have length {S}, got {rho.shape[0]}")
    if not 0.0 < gamma < 1.0:
        raise InvalidCmdpError(f"discount must lie in (0, 1), got {gamma}")
    if not np.all(np.isfinite(P)) or np.any(P < 0):
        raise InvalidCmdpError("transition entries must be finite and >= 0")
    row_err = np.abs(P.sum(axis=2) - 1.0)
    if np.any(row_err > STOCHASTIC_ATOL):
        s, a = np.unravel_index(np.argmax(row_err), row_err.shape)
        raise InvalidCmdpError(f"transition row (s={s}, a={a}) sums to {P[s, a].sum()!r}, not 1")
    if not np.all(np.isfinite(r)) or np.any(r < 0):
        raise InvalidCmdpError("reward entries must be finite and >= 0")
    if not np.all(np.isfinite(c)):
        raise InvalidCmdpError("thresholds must be finite")
    if not np.all(np.isfinite(rho)) or np.any(rho < 0):
        raise InvalidCmdpError("initial_dist entries must be finite and >= 0")
    if abs(rho.sum() - 1.0) > STOCHASTIC_ATOL:
        raise InvalidCmdpError(f"initial_dist sums to {rho.sum()!r}, not 1")


def load_cmdp(path) -> TabularCmdp:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidCmdpError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise InvalidCmdpError(f"{path}: top-level JSON value must be an object")
    return TabularCmdp.from_dict(data)


def save_cmdp(cmdp: TabularCmdp, path):
    Path(path).write_text(json.dumps(cmdp.to_dict(), indent=1))


@dataclass(frozen=True)
class RewardStats:
    r_i_max: np.ndarray  # per-reward max entries, index 0 is the objective
    R_max: float  # Euclidean norm of the constraint maxima
    r_0_max: float


def reward_stats(cmdp: TabularCmdp) -> RewardStats:
    r_max = cmdp.rewards.reshape(cmdp.num_constraints + 1, -1).max(axis=1)
    return RewardStats(r_i_max=r_max, R_max=float(np.sqrt(np.sum(r_max[1:] ** 2))),
                       r_0_max=float(r_max[0]))


def check_policy(cmdp: TabularCmdp, pi, atol=STOCHASTIC_ATOL) -> np.ndarray:
    """Return ``pi`` as a float array after checking shape and stochasticity."""
    pi = np.asarray(pi, dtype=float)
    if pi.shape != (cmdp.num_states, cmdp.num_actions):
        raise InvalidPolicyError(
            f"policy has shape {pi.shape}, expected {(cmdp.num_states, cmdp.num_actions)}")
    if not np.all(np.isfinite(pi)) or np.any(pi < 0):
        raise InvalidPolicyError("policy entries must be finite and >= 0")
    if np.any(np.abs(pi.sum(axis=1) - 1.0) > atol):
        raise InvalidPolicyError("policy rows must sum to 1")
    return pi


def uniform_policy(cmdp: TabularCmdp) -> np.ndarray:
    return np.full((cmdp.num_states, cmdp.num_actions), 1.0 / cmdp.num_actions)


def deterministic_policy(cmdp: TabularCmdp, actions) -> np.ndarray:
    pi = np.zeros((cmdp.num_states, cmdp.num_actions))
    pi[np.arange(cmdp.num_states), np.asarray(actions)] = 1.0
    return pi


def policy_transition(cmdp: TabularCmdp, pi) -> np.ndarray:
    """State-to-state kernel P_pi[s, s'] = sum_a pi(a|s) P(s'|s, a)."""
    pi = check_policy(cmdp, pi)
    return np.einsum("sa,sat->st", pi, cmdp.transition)


def _solve(M, b):
    try:
        x = np.linalg.solve(M, b)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"policy evaluation system is singular: {exc}") from None
    if not np.all(np.isfinite(x)):
        raise SolverError("policy evaluation produced non-finite values")
    return x


def state_occupancy(cmdp: TabularCmdp, pi) -> np.ndarray:
    """Discounted state visitation chi, the solution of (I - g P_pi^T) chi = (1-g) rho."""
    P_pi = policy_transition(cmdp, pi)
    gamma = cmdp.discount
    M = np.eye(cmdp.num_states) - gamma * P_pi.T
    chi = _solve(M, (1.0 - gamma) * cmdp.initial_dist)
    # Round-off can leave tiny negatives in unreachable states.
    return np.clip(chi, 0.0, None)


def occupancy(cmdp: TabularCmdp, pi) -> np.ndarray:
    """Discounted state-action occupancy nu(s, a) = chi(s) pi(a|s); sums to one."""
    pi = check_policy(cmdp, pi)
    return state_occupancy(cmdp, pi)[:, None] * pi


def flow_step(cmdp: TabularCmdp, pi, chi) -> np.ndarray:
    """One application of chi -> (1-g) rho + g P_pi^T chi; chi is its fixed point."""
    P_pi = policy_transition(cmdp, pi)
    return (1.0 - cmdp.discount) * cmdp.initial_dist + cmdp.discount * P_pi.T @ chi


def _reward_index(cmdp, i):
    if not (isinstance(i, (int, np.integer)) and 0 <= i <= cmdp.num_constraints):
        raise IndexError(f"reward index {i!r} out of range 0..{cmdp.num_constraints}")
    return int(i)


def values_from_occupancy(cmdp: TabularCmdp, nu) -> np.ndarray:
    """All m+1 values <nu, r_i>/(1-g) for a given occupancy measure."""
    return np.einsum("isa,sa->i", cmdp.rewards, nu) / (1.0 - cmdp.discount)


def values(cmdp: TabularCmdp, pi) -> np.ndarray:
    """Vector (V_0, V_1, ..., V_m) of expected discounted returns under rho."""
    return values_from_occupancy(cmdp, occupancy(cmdp, pi))


def value(cmdp: TabularCmdp, pi, i: int) -> float:
    i = _reward_index(cmdp, i)
    nu = occupancy(cmdp, pi)
    return float(np.sum(nu * cmdp.rewards[i]) / (1.0 - cmdp.discount))


def bellman_value(cmdp: TabularCmdp, pi, reward) -> float:
    """V(rho) via the state-value Bellman solve (I - g P_pi) v = r_pi.

    Independent of the occupancy route; used for cross-checking.
    """
    pi = check_policy(cmdp, pi)
    P_pi = policy_transition(cmdp, pi)
    r_pi = np.sum(pi * np.asarray(reward, dtype=float), axis=1)
    v = _solve(np.eye(cmdp.num_states) - cmdp.discount * P_pi, r_pi)
    return float(cmdp.initial_dist @ v)


def _neg_log_policy(pi):
    # 0 log 0 = 0
    with np.errstate(divide="ignore"):
        return np.where(pi > 0, -np.log(np.where(pi > 0, pi, 1.0)), 0.0)


def entropy_value(cmdp: TabularCmdp, pi) -> float:
    """Discounted policy entropy <nu, -log pi>/(1-g), with 0 log 0 = 0."""
    pi = check_policy(cmdp, pi)
    nu = occupancy(cmdp, pi)
    return float(np.sum(nu * _neg_log_policy(pi)) / (1.0 - cmdp.discount))


def _check_multipliers(cmdp, lam):
    lam = np.asarray(lam, dtype=float).reshape(-1)
    if lam.shape != (cmdp.num_constraints,):
        raise ValueError(f"lambda must have length {cmdp.num_constraints}, got {lam.shape[0]}")
    if np.any(lam < 0) or not np.all(np.isfinite(lam)):
        raise ValueError("lambda must be finite and entrywise >= 0")
    return lam


def combined_reward(cmdp: TabularCmdp, lam) -> np.ndarray:
    """r_lambda = r_0 + sum_i lambda_i r_i."""
    lam = _check_multipliers(cmdp, lam)
    return cmdp.rewards[0] + np.tensordot(lam, cmdp.rewards[1:], axes=1)


def regularized_lagrangian(cmdp: TabularCmdp, pi, lam, tau: float, mu: float) -> float:
    """V_0 + <lambda, V - c> + tau H(pi) + (mu/2)||lambda||^2."""
    if tau < 0 or mu < 0:
        raise ValueError("tau and mu must be >= 0")
    lam = _check_multipliers(cmdp, lam)
    pi = check_policy(cmdp, pi)
    v = values(cmdp, pi)
    out = v[0] + lam @ (v[1:] - cmdp.thresholds) + 0.5 * mu * lam @ lam
    if tau > 0:
        out += tau * entropy_value(cmdp, pi)
    return float(out)


def soft_q_eval(cmdp: TabularCmdp, pi, lam, tau: float) -> np.ndarray:
    """Entropy-regularised Q-function of ``pi`` for reward r_lambda."""
    if tau < 0:
        raise ValueError("tau must be >= 0")
    pi = check_policy(cmdp, pi)
    r_lam = combined_reward(cmdp, lam)
    if tau > 0:
        if np.any(pi <= 0):
            raise InvalidPolicyError("soft Q evaluation with tau > 0 needs a strictly positive policy")
        shaped = r_lam - tau * np.log(pi)
    else:
        shaped = r_lam
    r_pi = np.sum(pi * shaped, axis=1)
    P_pi = np.einsum("sa,sat->st", pi, cmdp.transition)
    v = _solve(np.eye(cmdp.num_states) - cmdp.discount * P_pi, r_pi)
    return r_lam + cmdp.discount * cmdp.transition @ v
