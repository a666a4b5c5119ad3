"""Ground-truth CMDP solutions from the occupancy-measure linear program.

The LP over nu in R^{S x A}::

    max   <nu, r_0>
    s.t.  sum_a nu(s, a) = (1-g) rho(s) + g sum_{s', a'} P(s | s', a') nu(s', a')
          <nu, r_i> >= (1-g) c_i,   i = 1..m
          nu >= 0

has the optimal CMDP value as its optimum divided by (1-g), and any optimal
nu yields an optimal stationary policy pi(a|s) = nu(s, a) / chi(s).
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, SolverError
from .mdp import ZERO_MASS, TabularCmdp, values
from .simplex import INFEASIBLE, OPTIMAL, linprog_max

ENUMERATION_LIMIT = 10**6


@dataclass(frozen=True)
class SolveCertificate:
    optimal_value: float
    optimal_occupancy: np.ndarray
    optimal_policy: np.ndarray
    constraint_values: np.ndarray
    feasibility_residual: float
    slater_margin: float
    dual_objective: float
    duals: np.ndarray  # flow-row multipliers then constraint multipliers

    @property
    def feasible(self) -> bool:
        return True

    def to_dict(self) -> dict:
        return {
            "status": "optimal",
            "optimal_value": self.optimal_value,
            "constraint_values": self.constraint_values.tolist(),
            "feasibility_residual": self.feasibility_residual,
            "slater_margin": self.slater_margin,
            "dual_objective": self.dual_objective,
            "optimal_occupancy": self.optimal_occupancy.tolist(),
            "optimal_policy": self.optimal_policy.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


@dataclass(frozen=True)
class Infeasible:
    """No stationary policy satisfies every constraint."""

    slater_margin: float
    message: str = "no policy satisfies the constraints"

    @property
    def feasible(self) -> bool:
        return False

    def to_dict(self) -> dict:
        return {"status": "infeasible", "slater_margin": self.slater_margin, "message": self.message}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def flow_constraints(cmdp: TabularCmdp):
    """Equality system (A, b) with A @ nu.ravel() = b encoding the occupancy flow."""
    S, A = cmdp.num_states, cmdp.num_actions
    g = cmdp.discount
    A_eq = np.kron(np.eye(S), np.ones((1, A))) - g * cmdp.transition.reshape(S * A, S).T
    return A_eq, (1.0 - g) * cmdp.initial_dist


def flow_residual(cmdp: TabularCmdp, nu) -> float:
    A_eq, b_eq = flow_constraints(cmdp)
    return float(np.max(np.abs(A_eq @ np.ravel(nu) - b_eq)))


def extract_policy(nu, zero_mass=ZERO_MASS) -> np.ndarray:
    """pi(a|s) = nu(s, a) / chi(s); states with chi(s) < zero_mass get the uniform row."""
    nu = np.asarray(nu, dtype=float)
    chi = nu.sum(axis=1)
    pi = np.full(nu.shape, 1.0 / nu.shape[1])
    live = chi >= zero_mass
    pi[live] = nu[live] / chi[live, None]
    return pi


def max_value(cmdp: TabularCmdp, i: int) -> float:
    """Largest achievable V_i(rho) ignoring all constraints."""
    A_eq, b_eq = flow_constraints(cmdp)
    res = linprog_max(cmdp.rewards[i].ravel(), A_eq, b_eq)
    if res.status != OPTIMAL:
        raise SolverError(f"single-objective LP for reward {i} ended with status {res.status}")
    return res.objective / (1.0 - cmdp.discount)


def slater_margin(cmdp: TabularCmdp) -> float:
    """Best uniform slack max_pi min_i (V_i^pi - c_i); <= 0 means Slater fails.

    Returns +inf when there are no constraints.
    """
    m = cmdp.num_constraints
    if m == 0:
        return float("inf")
    g = cmdp.discount
    A_flow, b_flow = flow_constraints(cmdp)
    n = A_flow.shape[1]
    # Variables [nu, t_plus, t_minus]; t = t_plus - t_minus is free.
    A_eq = np.hstack([A_flow, np.zeros((A_flow.shape[0], 2))])
    R = cmdp.rewards[1:].reshape(m, n)
    A_ub = np.hstack([-R, (1.0 - g) * np.ones((m, 1)), -(1.0 - g) * np.ones((m, 1))])
    b_ub = -(1.0 - g) * cmdp.thresholds
    c = np.zeros(n + 2)
    c[n], c[n + 1] = 1.0, -1.0
    res = linprog_max(c, A_eq, b_flow, A_ub, b_ub)
    if res.status != OPTIMAL:
        raise SolverError(f"Slater LP ended with status {res.status}")
    return res.objective


def solve_cmdp_lp(cmdp: TabularCmdp):
    """Solve the CMDP exactly. Returns a :class:`SolveCertificate` or :class:`Infeasible`."""
    g = cmdp.discount
    m = cmdp.num_constraints
    A_eq, b_eq = flow_constraints(cmdp)
    n = A_eq.shape[1]
    A_ub = -cmdp.rewards[1:].reshape(m, n)
    b_ub = -(1.0 - g) * cmdp.thresholds
    res = linprog_max(cmdp.rewards[0].ravel(), A_eq, b_eq, A_ub, b_ub)
    xi = slater_margin(cmdp)
    if res.status == INFEASIBLE:
        return Infeasible(slater_margin=xi)
    if res.status != OPTIMAL:
        raise SolverError(f"CMDP LP ended with status {res.status}")
    nu = res.x.reshape(cmdp.num_states, cmdp.num_actions)
    pi = extract_policy(nu)
    v = values(cmdp, pi)
    return SolveCertificate(
        optimal_value=res.objective / (1.0 - g),
        optimal_occupancy=nu,
        optimal_policy=pi,
        constraint_values=v[1:],
        feasibility_residual=flow_residual(cmdp, nu),
        slater_margin=xi,
        dual_objective=res.dual_objective / (1.0 - g),
        duals=res.duals,
    )


def enumerate_deterministic(cmdp: TabularCmdp, limit: int = ENUMERATION_LIMIT, atol: float = 1e-12):
    """Best V_0 over feasible deterministic policies, or None if none is feasible.

    Exhaustive over |A|^|S| policies. For m >= 1 the CMDP optimum may be
    stochastic, so this is only a lower bound on the LP value.
    """
    S, A = cmdp.num_states, cmdp.num_actions
    count = A ** S
    if count > limit:
        raise ConfigurationError(f"{A}^{S} = {count} deterministic policies exceeds the limit of {limit}")
    g = cmdp.discount
    rows = np.arange(S)
    best = None
    for actions in itertools.product(range(A), repeat=S):
        idx = np.array(actions)
        P_pi = cmdp.transition[rows, idx]
        chi = np.linalg.solve(np.eye(S) - g * P_pi.T, (1.0 - g) * cmdp.initial_dist)
        v = cmdp.rewards[:, rows, idx] @ chi / (1.0 - g)
        if np.all(v[1:] >= cmdp.thresholds - atol) and (best is None or v[0] > best):
            best = float(v[0])
    return best
