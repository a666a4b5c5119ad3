"""Accelerated, regularised primal-dual method for tabular CMDPs (AR-CPO).

The dual variable is updated by a Nesterov-type scheme on the
(tau, mu)-regularised dual function

    d(lam) = max_pi V_0 + <lam, V - c> + tau H(pi) + (mu/2)||lam||^2,

whose gradient at lam is V^{pi*_lam} - c + mu lam. Each outer step calls an
inner RegPO solver at the search point, takes a closed-form proximal step on
the box [0, 2B]^m and averages. The returned policy is the stationary policy
whose occupancy measure is the geometric-weight average of the iterates'
occupancies, so every value V_i of the output equals the same weighted
average of the iterates' values.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, SolverError
from .mdp import (
    ZERO_MASS,
    RewardStats,
    TabularCmdp,
    check_policy,
    occupancy,
    regularized_lagrangian,
    reward_stats,
    values,
    values_from_occupancy,
)
from .oracle import slater_margin
from .regpo import INNER_SOLVERS, iteration_budget, regpo_softq

log = logging.getLogger(__name__)

REFERENCE_DELTA = 1e-10


@dataclass(frozen=True)
class Diminishing:
    """alpha_t = q_t = 2s/(t+1) for t < H, then 2s/H.

    Heuristic schedule for experiments; carries no convergence guarantee.
    """

    s: float
    H: int

    def __post_init__(self):
        if not 0 < self.s <= 1:
            raise ConfigurationError(f"diminishing schedule needs 0 < s <= 1, got {self.s}")
        if self.H < 1:
            raise ConfigurationError(f"diminishing schedule needs H >= 1, got {self.H}")

    def __call__(self, t: int) -> float:
        return 2.0 * self.s / (t + 1) if t < self.H else 2.0 * self.s / self.H


@dataclass(frozen=True)
class ArCpoConfig:
    T: int
    eta: float
    alpha: float
    q: float
    tau: float
    mu: float
    delta: float
    B: float
    schedule: Diminishing | None = None  # None means constant alpha and q
    inner: str = "softq"
    inner_mode: str = "budget"
    warm_start: bool = False
    diagnostics: bool = False
    # Set when (alpha, q, eta) were derived from a smoothness constant; the
    # three step sizes are then checked against it.
    L_d: float | None = None
    derivation: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not (isinstance(self.T, (int, np.integer)) and self.T >= 1):
            raise ConfigurationError(f"T must be a positive integer, got {self.T!r}")
        if not self.eta > 0:
            raise ConfigurationError(f"eta must be > 0, got {self.eta}")
        if self.schedule is None and not (0 < self.alpha <= 1 and 0 <= self.q <= self.alpha):
            raise ConfigurationError(
                f"need 0 < alpha <= 1 and 0 <= q <= alpha, got alpha={self.alpha}, q={self.q}")
        if not self.tau > 0:
            raise ConfigurationError(f"tau must be > 0, got {self.tau}")
        if self.mu < 0:
            raise ConfigurationError(f"mu must be >= 0, got {self.mu}")
        if not (self.delta > 0 and self.B > 0):
            raise ConfigurationError("delta and B must be > 0")
        if self.inner not in INNER_SOLVERS:
            raise ConfigurationError(f"unknown inner solver {self.inner!r}")
        if self.L_d is not None:
            alpha, q, eta = theorem1_params(self.mu, self.L_d)
            for name, want, got in (("alpha", alpha, self.alpha), ("q", q, self.q), ("eta", eta, self.eta)):
                if abs(want - got) > 1e-12 * max(1.0, abs(want)):
                    raise ConfigurationError(f"{name}={got} does not match {want} implied by L_d={self.L_d}")

    def step_weights(self, t: int) -> tuple[float, float]:
        """(alpha_t, q_t) used at outer iteration t (1-based)."""
        if self.schedule is None:
            return self.alpha, self.q
        a = self.schedule(t)
        return a, a


@dataclass
class TraceRecord:
    t: int
    values: np.ndarray  # (V_0, ..., V_m) of the iterate policy
    output_values: np.ndarray  # values of the output policy if the run stopped at t
    lam: np.ndarray
    lam_under: np.ndarray
    lam_bar: np.ndarray
    lam_step_norm: float
    oracle_calls: int  # cumulative inner-oracle calls
    grad_error: float | None = None  # ||g_hat - grad d(lam_under)||_2
    Delta: float | None = None  # Lagrangian suboptimality of pi_t at lam_under


@dataclass
class RunTrace:
    solver: str
    thresholds: np.ndarray
    records: list = field(default_factory=list)
    policies: list = field(default_factory=list)
    occupancies: list = field(default_factory=list)
    weights: np.ndarray | None = None
    output_policy: np.ndarray | None = None
    final_values: np.ndarray | None = None
    last_policy: np.ndarray | None = None

    def __len__(self):
        return len(self.records)

    @property
    def oracle_calls(self) -> int:
        return self.records[-1].oracle_calls if self.records else 0

    def gap(self, v_star: float, values=None) -> float:
        values = self.final_values if values is None else values
        return float(v_star - values[0])

    def violation(self, values=None) -> float:
        values = self.final_values if values is None else values
        return float(np.sum(np.clip(self.thresholds - values[1:], 0.0, None)))

    def first_reaching(self, v_star: float, epsilon: float, attr: str = "output_values"):
        """First record whose output is epsilon-optimal (gap and l1 violation), or None."""
        for rec in self.records:
            vals = getattr(rec, attr)
            if self.gap(v_star, vals) <= epsilon and self.violation(vals) <= epsilon:
                return rec
        return None


def dual_grad_estimate(cmdp: TabularCmdp, pi, lam_under, mu: float) -> np.ndarray:
    """Estimated dual gradient V^pi(rho) - c + mu * lam_under (constraints only)."""
    v = values(cmdp, pi)
    return v[1:] - cmdp.thresholds + mu * np.asarray(lam_under, dtype=float)


def dual_prox_step(lam_prev, lam_under, g_hat, eta: float, mu: float, B: float) -> np.ndarray:
    """Box-constrained minimiser of
    eta [<g_hat, lam> + (mu/2)||lam - lam_under||^2] + (1/2)||lam - lam_prev||^2.

    The objective is separable with curvature 1 + eta mu, so the minimiser is
    the clamp of the unconstrained one to [0, 2B].
    """
    lam_prev = np.asarray(lam_prev, dtype=float)
    lam_under = np.asarray(lam_under, dtype=float)
    g_hat = np.asarray(g_hat, dtype=float)
    center = (lam_prev + eta * mu * lam_under - eta * g_hat) / (1.0 + eta * mu)
    return np.clip(center, 0.0, 2.0 * B)


def output_weights(T: int, alpha: float) -> np.ndarray:
    """w_1 = (1-alpha)^(T-1), w_t = alpha (1-alpha)^(T-t) for t >= 2."""
    return schedule_weights([alpha] * T)


def schedule_weights(alphas) -> np.ndarray:
    """Weights of the running average nu_1, (1-a_t) avg + a_t nu_t, ...

    w_t = a_t prod_{s > t} (1 - a_s) with a_1 treated as 1; they sum to one.
    """
    a = np.asarray(alphas, dtype=float).copy()
    a[0] = 1.0
    tail = np.ones_like(a)
    for t in range(len(a) - 2, -1, -1):
        tail[t] = tail[t + 1] * (1.0 - a[t + 1])
    return a * tail


def mix_occupancies(nus, weights) -> np.ndarray:
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (len(nus),):
        raise ValueError(f"got {len(nus)} policies but {weights.size} weights")
    if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-10:
        raise ValueError("mixture weights must be >= 0 and sum to 1")
    nu = np.tensordot(weights, np.asarray(nus), axes=1)
    chi = nu.sum(axis=1)
    pi = np.full(nu.shape, 1.0 / nu.shape[1])
    live = chi >= ZERO_MASS
    pi[live] = nu[live] / chi[live, None]
    return pi


def mix_policies(cmdp: TabularCmdp, policies, weights) -> np.ndarray:
    """Stationary policy whose occupancy is sum_t w_t nu^{pi_t}.

    States the mixture never visits get a uniform row.
    """
    nus = [occupancy(cmdp, check_policy(cmdp, p)) for p in policies]
    return mix_occupancies(nus, weights)


def run_arcpo(cmdp: TabularCmdp, config: ArCpoConfig, stats: RewardStats = None):
    """Run the accelerated primal-dual loop. Returns (output policy, RunTrace)."""
    stats = reward_stats(cmdp) if stats is None else stats
    inner = INNER_SOLVERS[config.inner]
    m = cmdp.num_constraints
    c = cmdp.thresholds
    lam = np.zeros(m)
    lam_bar = np.zeros(m)
    trace = RunTrace(solver="arcpo", thresholds=c.copy())
    alphas = []
    calls = 0
    q_prev = None
    out_vals = None

    for t in range(1, config.T + 1):
        alpha_t, q_t = config.step_weights(t)
        alphas.append(alpha_t)
        lam_under = (1.0 - q_t) * lam_bar + q_t * lam
        res = inner(cmdp, lam_under, config.tau, config.delta, stats, config.B,
                    mode=config.inner_mode, q_init=q_prev if config.warm_start else None)
        calls += res.iterations_used
        q_prev = res.q_values
        pi = res.policy
        nu = occupancy(cmdp, pi)
        v = values_from_occupancy(cmdp, nu)
        g_hat = v[1:] - c + config.mu * lam_under
        lam_new = dual_prox_step(lam, lam_under, g_hat, config.eta, config.mu, config.B)
        lam_bar = (1.0 - alpha_t) * lam_bar + alpha_t * lam_new
        step = float(np.linalg.norm(lam_new - lam))
        lam = lam_new
        if not (np.all(np.isfinite(lam)) and np.all(np.isfinite(lam_bar)) and np.all(np.isfinite(v))):
            raise SolverError("non-finite dual iterate or value", iteration=t)
        out_vals = v.copy() if t == 1 else (1.0 - alpha_t) * out_vals + alpha_t * v

        rec = TraceRecord(t=t, values=v, output_values=out_vals, lam=lam.copy(),
                          lam_under=lam_under, lam_bar=lam_bar.copy(), lam_step_norm=step,
                          oracle_calls=calls)
        if config.diagnostics:
            rec.grad_error, rec.Delta = _inner_errors(cmdp, stats, config, lam_under, v)
        trace.records.append(rec)
        trace.policies.append(pi)
        trace.occupancies.append(nu)

    trace.weights = schedule_weights(alphas)
    trace.output_policy = mix_occupancies(trace.occupancies, trace.weights)
    trace.final_values = values(cmdp, trace.output_policy)
    trace.last_policy = trace.policies[-1]
    return trace.output_policy, trace


def _inner_errors(cmdp, stats, config, lam_under, v):
    ref = regpo_softq(cmdp, lam_under, config.tau, REFERENCE_DELTA, stats, config.B)
    v_ref = values(cmdp, ref.policy)
    c = cmdp.thresholds
    grad_error = float(np.linalg.norm(v[1:] - v_ref[1:]))
    Delta = float(v_ref[0] + lam_under @ (v_ref[1:] - c) - (v[0] + lam_under @ (v[1:] - c)))
    return grad_error, Delta


def theorem1_params(mu: float, L_d: float) -> tuple[float, float, float]:
    """Constant step sizes for an L_d-smooth, mu-strongly convex dual:
    alpha = sqrt(mu / (2 L_d)), q = (2 alpha - mu/L_d) / (2 - mu/L_d),
    eta = alpha / (mu (1 - alpha)).
    """
    if not mu > 0:
        raise ConfigurationError("mu must be > 0 for the accelerated step sizes")
    if L_d < mu:
        raise ConfigurationError(f"L_d={L_d} must be >= mu={mu}")
    kappa = mu / L_d
    alpha = math.sqrt(kappa / 2.0)
    q = (2.0 * alpha - kappa) / (2.0 - kappa)
    eta = alpha / (mu * (1.0 - alpha))
    return alpha, q, eta


def dual_bound(stats: RewardStats, gamma: float, xi: float) -> float:
    """B = r_0max / ((1-g) xi), an upper bound on ||lambda*||_1."""
    if not xi > 0:
        raise ConfigurationError(f"Slater margin must be > 0, got {xi}")
    return stats.r_0_max / ((1.0 - gamma) * xi)


def estimate_dual_smoothness(cmdp: TabularCmdp, tau: float, mu: float, num_lines: int = 20,
                             box_B: float = None, seed: int = 0, delta: float = REFERENCE_DELTA,
                             points: int = 41) -> float:
    """Empirical Lipschitz constant of grad d on the box [0, 2B]^m.

    Draws ``num_lines`` random segments in the box and takes the largest
    finite-difference quotient ||grad d(a) - grad d(b)|| / ||a - b|| between
    neighbouring points of a ``points``-point grid on each. The gradient
    changes sharply only near policy switches, which far-apart random pairs
    tend to average away. ``box_B`` defaults to the instance's dual bound.
    Deterministic given ``seed``.
    """
    if not tau > 0:
        raise ConfigurationError(f"tau must be > 0, got {tau}")
    if num_lines < 1 or points < 2:
        raise ConfigurationError("need num_lines >= 1 and points >= 2")
    m = cmdp.num_constraints
    if m == 0:
        return 0.0
    stats = reward_stats(cmdp)
    if box_B is None:
        box_B = dual_bound(stats, cmdp.discount, slater_margin(cmdp))
    rng = np.random.default_rng(seed)
    hi = 2.0 * box_B
    grid = np.linspace(0.0, 1.0, points)

    def grad(lam):
        res = regpo_softq(cmdp, lam, tau, delta, stats, box_B)
        return values(cmdp, res.policy)[1:] - cmdp.thresholds + mu * lam

    best = 0.0
    for _ in range(num_lines):
        a = rng.uniform(0.0, hi, size=m)
        b = rng.uniform(0.0, hi, size=m)
        h = np.linalg.norm(b - a) / (points - 1)
        if h == 0.0:
            continue
        grads = np.array([grad(a + t * (b - a)) for t in grid])
        best = max(best, float(np.linalg.norm(np.diff(grads, axis=0), axis=1).max() / h))
    return best


def corollary1_schedule(cmdp: TabularCmdp, epsilon: float, xi: float = None, *,
                        stats: RewardStats = None, L_d: float = None, L_nu: float = None,
                        K0_bound: float = None, safety_factor: float = 2.0,
                        smoothness_lines: int = 20, seed: int = 0, inner: str = "softq",
                        diagnostics: bool = False, guaranteed: bool = False) -> ArCpoConfig:
    """Parameters that make the AR-CPO output epsilon-optimal.

    tau = epsilon / log|A|, mu = epsilon / (6 m B^2), B = r_0max / ((1-g) xi).
    The dual smoothness constant is taken from ``L_d`` if given, else from
    ``L_nu`` through 2 R_max^2 L_nu / ((1-g)^2 tau) + mu, else estimated
    empirically and multiplied by ``safety_factor``. delta and T follow the
    complexity bounds; K_0(lambda*) is bounded by d(0) + (alpha/2)(mu + 1/eta) 4 m B^2
    unless ``K0_bound`` is supplied.

    With these choices the bounds only give gap <= 5 epsilon and violation
    <= 6 epsilon / B. ``guaranteed=True`` builds the schedule for
    epsilon / max(5, 6 / B) instead, so that both bounds are at most epsilon.
    """
    if not epsilon > 0:
        raise ConfigurationError("epsilon must be > 0")
    stats = reward_stats(cmdp) if stats is None else stats
    gamma = cmdp.discount
    m = cmdp.num_constraints
    A = cmdp.num_actions
    if xi is None:
        xi = slater_margin(cmdp)
    target = epsilon
    if guaranteed:
        B_est = dual_bound(stats, gamma, xi) if m > 0 else 1.0
        epsilon = epsilon / max(5.0, 6.0 / B_est)
    tau = epsilon / math.log(A) if A > 1 else epsilon
    if m == 0:
        log.warning("no constraints: mu = epsilon / (6 m B^2) is undefined, using mu = epsilon")
        B = 1.0
        mu = epsilon
    else:
        B = dual_bound(stats, gamma, xi)
        mu = epsilon / (6.0 * m * B * B)

    R = stats.R_max
    smooth_est = None
    if L_d is None:
        if L_nu is not None:
            L_d = 2.0 * R * R * L_nu / ((1.0 - gamma) ** 2 * tau) + mu
        else:
            smooth_est = estimate_dual_smoothness(cmdp, tau, mu, smoothness_lines, B, seed)
            L_d = safety_factor * smooth_est
    L_d = max(L_d, mu)
    if L_nu is None:
        # Back out the mixing constant implied by L_d; it is never below 1.
        implied = (L_d - mu) * (1.0 - gamma) ** 2 * tau / (2.0 * R * R) if R > 0 else 1.0
        L_nu = max(1.0, implied)

    alpha, q, eta = theorem1_params(mu, L_d)
    sm = math.sqrt(m)
    if K0_bound is None:
        pi0 = regpo_softq(cmdp, np.zeros(m), tau, REFERENCE_DELTA, stats, B).policy
        d0 = regularized_lagrangian(cmdp, pi0, np.zeros(m), tau, mu)
        K0_bound = d0 + 0.5 * alpha * (mu + 1.0 / eta) * 4.0 * m * B * B
    scale = 2.0 * R / (1.0 - gamma) + 2.0 * sm * B / eta
    r0 = max(stats.r_0_max, 1e-300)
    delta_candidates = [epsilon / (L_nu * r0) * math.sqrt(mu / (2.0 * L_d))]
    if m > 0 and R > 0:
        delta_candidates.append(epsilon ** 2 / (8.0 * L_nu * R * scale ** 2 * eta * sm * B))
    delta = min(delta_candidates)

    logs = [2.0 * math.log(max(2.0 * math.sqrt(eta * max(K0_bound, 0.0)) * scale / epsilon, 1.0))]
    if m > 0 and R > 0:
        logs.append(math.log(max(2.0 * math.e * sm * B * R / ((1.0 - gamma) * epsilon), 1.0)))
    T = max(1, math.ceil(math.sqrt(2.0 * L_d / mu) * max(logs)))

    derivation = dict(epsilon=epsilon, target=target, xi=xi, L_nu=L_nu, K0_bound=K0_bound,
                      smoothness_estimate=smooth_est,
                      inner_budget=iteration_budget(stats, gamma, delta, tau, B))
    log.info("corollary schedule: T=%d tau=%.4g mu=%.4g B=%.4g L_d=%.4g delta=%.3g K=%d",
             T, tau, mu, B, L_d, delta, derivation["inner_budget"])
    return ArCpoConfig(T=T, eta=eta, alpha=alpha, q=q, tau=tau, mu=mu, delta=delta, B=B,
                       inner=inner, diagnostics=diagnostics, L_d=L_d, derivation=derivation)


def theorem1_bounds(config: ArCpoConfig, stats: RewardStats, gamma: float, num_constraints: int,
                    num_actions: int, K0: float, max_Delta: float, max_grad_error: float) -> dict:
    """Evaluate the optimality-gap and violation bounds for a finished run."""
    if config.L_d is None:
        raise ConfigurationError("bounds need a config derived from L_d")
    mu, L_d, eta, B, tau = config.mu, config.L_d, config.eta, config.B, config.tau
    m, R, T = num_constraints, stats.R_max, config.T
    rate = 1.0 - math.sqrt(mu / (2.0 * L_d))
    sm = math.sqrt(m)
    zeta = 2.0 * rate ** (T / 2.0) * math.sqrt(eta * max(K0, 0.0)) \
        + math.sqrt(8.0 * eta * sm * B * max_grad_error)
    amp = math.sqrt(2.0 * L_d / mu)
    ent = tau * math.log(num_actions) / (1.0 - gamma)
    gap = zeta * (2.0 * R / (1.0 - gamma) + 2.0 * sm * B / eta) + amp * max_Delta + ent + 6 * mu * m * B * B
    viol = (zeta * (2.0 * R / ((1.0 - gamma) * B) + 2.0 * sm / eta) + amp * max_Delta / B
            + ent / B + 6 * mu * m * B + 2.0 * rate ** (T - 1) * sm * R / (1.0 - gamma))
    return {"zeta_T": zeta, "gap_bound": gap, "violation_bound": viol}
