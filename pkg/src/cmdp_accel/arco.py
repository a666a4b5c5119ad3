"""AR-CO: the accelerated regularised dual loop for a generic problem

    min_x f_0(x)   s.t.   f_i(x) <= 0,  i = 1..m,

given a black-box Lagrangian minimiser ``lagopt(delta, lam)``. The dual
function d(lam) = min_x f_0 + <lam, f> is maximised, so the proximal step
ascends along f(x_t) - mu lam_under. Strong duality, dual smoothness and a
Slater point are the caller's responsibility and are not checked.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .arcpo import TraceRecord, dual_prox_step, schedule_weights, theorem1_params
from .errors import ConfigurationError, SolverError


@dataclass(frozen=True)
class ConstrainedProblem:
    dimension: int
    objective: Callable  # x -> f_0(x)
    constraints: Callable  # x -> array of f_i(x), i = 1..m
    bound: float  # G with |f_i(x)| <= G on the feasible domain
    lagopt: Callable  # (delta, lam) -> x minimising f_0 + <lam, f> to accuracy delta
    slater_point: np.ndarray
    slater_margin: float  # xi with f_i(slater_point) <= -xi
    dual_smoothness: float | None = None  # L for d(lam), when known

    def __post_init__(self):
        fx = np.asarray(self.constraints(np.asarray(self.slater_point, float)), dtype=float)
        if not self.slater_margin > 0:
            raise ConfigurationError("slater_margin must be > 0")
        if np.any(fx > -self.slater_margin + 1e-10):
            raise ConfigurationError(
                f"slater point has f = {fx.tolist()}, not <= -{self.slater_margin}")

    @property
    def num_constraints(self) -> int:
        return len(np.atleast_1d(self.constraints(np.asarray(self.slater_point, float))))


@dataclass(frozen=True)
class ArcoConfig:
    T: int
    eta: float
    alpha: float
    q: float
    mu: float
    delta: float
    B: float

    def __post_init__(self):
        if not (isinstance(self.T, (int, np.integer)) and self.T >= 1):
            raise ConfigurationError(f"T must be a positive integer, got {self.T!r}")
        if not (self.eta > 0 and 0 < self.alpha <= 1 and 0 <= self.q <= self.alpha):
            raise ConfigurationError("need eta > 0, 0 < alpha <= 1, 0 <= q <= alpha")
        if self.mu < 0 or not (self.delta > 0 and self.B > 0):
            raise ConfigurationError("need mu >= 0, delta > 0, B > 0")

    @classmethod
    def from_smoothness(cls, problem: ConstrainedProblem, mu: float, T: int,
                        L: float = None, delta: float = 1e-12) -> "ArcoConfig":
        """Step sizes for an L-smooth dual regularised by mu; B = G / xi."""
        L = problem.dual_smoothness if L is None else L
        if L is None:
            raise ConfigurationError("dual smoothness constant unknown; pass L")
        alpha, q, eta = theorem1_params(mu, L + mu)
        return cls(T=T, eta=eta, alpha=alpha, q=q, mu=mu, delta=delta,
                   B=problem.bound / problem.slater_margin)


@dataclass
class ArcoResult:
    iterates: list
    weights: np.ndarray
    sample: np.ndarray
    sample_index: int
    records: list = field(default_factory=list)

    def expected(self, fn) -> np.ndarray:
        """Weighted expectation of fn(x_t) under the output distribution."""
        return np.tensordot(self.weights, np.array([np.atleast_1d(fn(x)) for x in self.iterates]), axes=1)

    @property
    def expected_values(self) -> np.ndarray:
        """E[(f_0, f_1, ..., f_m)(x~)], from the stored per-iterate values."""
        return np.tensordot(self.weights, np.array([r.values for r in self.records]), axes=1)

    def gap(self, f_star: float) -> float:
        return float(self.expected_values[0] - f_star)

    def violation(self) -> float:
        return float(np.sum(np.clip(self.expected_values[1:], 0.0, None)))


def dual_k0(config: ArcoConfig, d_mu, lam_star) -> float:
    """K_0(lam*) = d_mu(lam*) - d_mu(0) + (alpha/2)(mu + 1/eta)||lam*||^2.

    The dual is maximised here, so the sign of the first two terms is flipped
    relative to the minimisation form; the loop starts at lam = bar lam = 0.
    """
    lam_star = np.asarray(lam_star, dtype=float)
    return float(d_mu(lam_star) - d_mu(np.zeros_like(lam_star))
                 + 0.5 * config.alpha * (config.mu + 1.0 / config.eta) * lam_star @ lam_star)


def run_arco(problem: ConstrainedProblem, config: ArcoConfig, rng=None) -> ArcoResult:
    """Run AR-CO. ``rng`` (a numpy Generator or seed) draws the sampled output."""
    rng = np.random.default_rng(rng)
    m = problem.num_constraints
    lam = np.zeros(m)
    lam_bar = np.zeros(m)
    xs, records = [], []
    for t in range(1, config.T + 1):
        lam_under = (1.0 - config.q) * lam_bar + config.q * lam
        try:
            x = np.asarray(problem.lagopt(config.delta, lam_under), dtype=float)
        except Exception as exc:
            raise SolverError(f"Lagrangian minimiser failed: {exc}", iteration=t) from exc
        fx = np.atleast_1d(np.asarray(problem.constraints(x), dtype=float))
        f0 = float(problem.objective(x))
        g_hat = fx - config.mu * lam_under
        lam_new = dual_prox_step(lam, lam_under, -g_hat, config.eta, config.mu, config.B)
        lam_bar = (1.0 - config.alpha) * lam_bar + config.alpha * lam_new
        if not (np.all(np.isfinite(lam_new)) and np.isfinite(f0)):
            raise SolverError("non-finite dual iterate or objective", iteration=t)
        vals = np.concatenate([[f0], fx])
        out = vals if t == 1 else (1.0 - config.alpha) * records[-1].output_values + config.alpha * vals
        records.append(TraceRecord(t=t, values=vals, output_values=out, lam=lam_new.copy(),
                                   lam_under=lam_under, lam_bar=lam_bar.copy(),
                                   lam_step_norm=float(np.linalg.norm(lam_new - lam)), oracle_calls=t))
        lam = lam_new
        xs.append(x)
    w = schedule_weights([config.alpha] * config.T)
    idx = int(rng.choice(config.T, p=w / w.sum()))
    return ArcoResult(iterates=xs, weights=w, sample=xs[idx], sample_index=idx, records=records)


def quadratic_problem(Q, p, C, d, bound: float, slater_point) -> ConstrainedProblem:
    """min 1/2 x'Qx + p'x  s.t.  Cx - d <= 0, with Q positive definite and x unconstrained.

    The Lagrangian minimiser is x(lam) = -Q^{-1}(p + C'lam), exact for any
    delta, and the dual is smooth with L = ||C Q^{-1} C'||_2.
    """
    Q = np.asarray(Q, dtype=float)
    p = np.asarray(p, dtype=float).reshape(-1)
    C = np.atleast_2d(np.asarray(C, dtype=float))
    d = np.asarray(d, dtype=float).reshape(-1)
    n = Q.shape[0]
    if Q.shape != (n, n) or p.shape != (n,) or C.shape[1] != n or d.shape != (C.shape[0],):
        raise ConfigurationError("inconsistent QP dimensions")
    if not np.allclose(Q, Q.T) or np.linalg.eigvalsh(Q).min() <= 0:
        raise ConfigurationError("Q must be symmetric positive definite")
    Qinv = np.linalg.inv(Q)
    x_xi = np.asarray(slater_point, dtype=float)
    xi = float(-np.max(C @ x_xi - d))
    return ConstrainedProblem(
        dimension=n,
        objective=lambda x: 0.5 * x @ Q @ x + p @ x,
        constraints=lambda x: C @ x - d,
        bound=float(bound),
        lagopt=lambda delta, lam: -Qinv @ (p + C.T @ lam),
        slater_point=x_xi,
        slater_margin=xi,
        dual_smoothness=float(np.linalg.norm(C @ Qinv @ C.T, 2)),
    )


def load_quadratic_problem(path) -> ConstrainedProblem:
    """Read {"Q", "p", "C", "d", "G", "slater_point"} from a JSON file."""
    with open(path) as fh:
        data = json.load(fh)
    try:
        return quadratic_problem(data["Q"], data["p"], data["C"], data["d"], data["G"], data["slater_point"])
    except KeyError as exc:
        raise ConfigurationError(f"QP file is missing field {exc}") from None


def kkt_example() -> ConstrainedProblem:
    """f_0 = ||x||^2/2, f_1 = 1 - x_1 in R^2: x* = (1, 0), f_0* = 0.5, lambda* = 1.

    G = 4 bounds |f_0|, |f_1| on the box [-2, 2]^2 containing every iterate
    the run visits for lambda in [0, 2].
    """
    return quadratic_problem(np.eye(2), np.zeros(2), [[-1.0, 0.0]], [-1.0], 4.0, [2.0, 0.0])
