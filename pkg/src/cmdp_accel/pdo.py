"""Baseline primal-dual method: inner policy optimisation alternating with a
projected dual gradient step lam <- (lam - eta (V^pi - c))_+.

The baseline does not prescribe an output policy, so both the last iterate
and the uniform occupancy mixture of all iterates are reported.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .arcpo import RunTrace, TraceRecord, mix_occupancies
from .errors import ConfigurationError, SolverError
from .mdp import RewardStats, TabularCmdp, occupancy, reward_stats, values, values_from_occupancy
from .regpo import INNER_SOLVERS

UNREGULARIZED_TAU = 1e-3


@dataclass(frozen=True)
class PdoConfig:
    T: int
    eta: float
    tau: float = UNREGULARIZED_TAU
    delta: float = 1e-8
    inner: str = "softq"
    box_B: float | None = None  # None projects onto the nonnegative orthant
    B: float = 1.0  # only enters the inner iteration budget

    def __post_init__(self):
        if not (isinstance(self.T, (int, np.integer)) and self.T >= 1):
            raise ConfigurationError(f"T must be a positive integer, got {self.T!r}")
        if not self.eta > 0:
            raise ConfigurationError(f"eta must be > 0, got {self.eta}")
        if not (self.tau > 0 and self.delta > 0 and self.B > 0):
            raise ConfigurationError("tau, delta and B must be > 0")
        if self.box_B is not None and not self.box_B > 0:
            raise ConfigurationError("box_B must be > 0")
        if self.inner not in INNER_SOLVERS:
            raise ConfigurationError(f"unknown inner solver {self.inner!r}")


def run_pdo(cmdp: TabularCmdp, config: PdoConfig, stats: RewardStats = None, stop=None):
    """Run the baseline. Returns (uniform-mixture policy, RunTrace).

    ``trace.last_policy`` holds the last iterate. ``stop(record)`` may end
    the run early by returning True; the outputs then cover the iterations run.
    """
    stats = reward_stats(cmdp) if stats is None else stats
    inner = INNER_SOLVERS[config.inner]
    c = cmdp.thresholds
    hi = np.inf if config.box_B is None else 2.0 * config.box_B
    lam = np.zeros(cmdp.num_constraints)
    trace = RunTrace(solver="pdo", thresholds=c.copy())
    calls = 0
    avg = None

    for t in range(1, config.T + 1):
        res = inner(cmdp, lam, config.tau, config.delta, stats, config.B)
        calls += res.iterations_used
        nu = occupancy(cmdp, res.policy)
        v = values_from_occupancy(cmdp, nu)
        lam_new = np.clip(lam - config.eta * (v[1:] - c), 0.0, hi)
        if not (np.all(np.isfinite(lam_new)) and np.all(np.isfinite(v))):
            raise SolverError("non-finite dual iterate or value", iteration=t)
        avg = v.copy() if t == 1 else avg + (v - avg) / t
        rec = TraceRecord(t=t, values=v, output_values=avg, lam=lam_new.copy(), lam_under=lam.copy(),
                          lam_bar=lam_new.copy(), lam_step_norm=float(np.linalg.norm(lam_new - lam)),
                          oracle_calls=calls)
        lam = lam_new
        trace.records.append(rec)
        trace.policies.append(res.policy)
        trace.occupancies.append(nu)
        if stop is not None and stop(rec):
            break

    n = len(trace.records)
    trace.weights = np.full(n, 1.0 / n)
    trace.output_policy = mix_occupancies(trace.occupancies, trace.weights)
    trace.final_values = values(cmdp, trace.output_policy)
    trace.last_policy = trace.policies[-1]
    return trace.output_policy, trace
