"""Seeded instance generation, the AR-CPO vs PDO benchmark, trace CSVs, SVG
plots and the invariant suite behind ``cmdp-accel verify``.

Trace CSV columns, in this order::

    solver,outer_iter,oracle_calls,V0,gap,violation_l1,lambda_norm,lambda_step_norm

``V0``, ``gap`` and ``violation_l1`` describe the solver's output policy had
the run stopped at ``outer_iter``; ``gap`` is measured against the LP optimum.
Rows are sorted by (solver, outer_iter) and floats are printed with 12
significant digits, so a rerun with the same seed is byte-identical.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .arcpo import (
    ArCpoConfig,
    RunTrace,
    corollary1_schedule,
    dual_prox_step,
    run_arcpo,
    theorem1_params,
)
from .errors import ConfigurationError, SolverError
from .mdp import (
    TabularCmdp,
    bellman_value,
    load_cmdp,
    occupancy,
    reward_stats,
    state_occupancy,
    values,
)
from .oracle import flow_residual, max_value, slater_margin, solve_cmdp_lp
from .pdo import UNREGULARIZED_TAU, PdoConfig, run_pdo
from .regpo import iteration_budget, regpo_npg, regpo_softq, soft_bellman

log = logging.getLogger(__name__)

CSV_COLUMNS = ("solver", "outer_iter", "oracle_calls", "V0", "gap", "violation_l1",
               "lambda_norm", "lambda_step_norm")
DEFAULT_ETAS = tuple(float(x) for x in np.logspace(-3, 0, 8))
MAX_TRIES = 10
THREADS_ENV = "CMDP_ACCEL_THREADS"


def gen_random_cmdp(seed: int, S: int, A: int, m: int, gamma: float = 0.9,
                    threshold_fraction: float = 0.6, max_tries: int = MAX_TRIES) -> TabularCmdp:
    """Random CMDP with Dirichlet(1) transition rows, U[0, 1] rewards and uniform rho.

    c_i is ``threshold_fraction`` times the largest achievable V_i. If the
    result has no strictly feasible policy the draw is repeated with seed + 1,
    seed + 2, ... up to ``max_tries`` times.
    """
    if min(S, A) < 1 or m < 0:
        raise ConfigurationError("need S, A >= 1 and m >= 0")
    if not 0.0 < threshold_fraction < 1.0:
        raise ConfigurationError(f"threshold_fraction must lie in (0, 1), got {threshold_fraction}")
    if not 0.0 < gamma < 1.0:
        raise ConfigurationError(f"gamma must lie in (0, 1), got {gamma}")
    for offset in range(max_tries):
        rng = np.random.default_rng(seed + offset)
        P = rng.dirichlet(np.ones(S), size=(S, A))
        P /= P.sum(axis=2, keepdims=True)
        r = rng.uniform(0.0, 1.0, size=(m + 1, S, A))
        rho = np.full(S, 1.0 / S)
        raw = TabularCmdp(P, r, np.zeros(m), gamma, rho)
        c = np.array([threshold_fraction * max_value(raw, i) for i in range(1, m + 1)])
        cmdp = raw.with_thresholds(c)
        if slater_margin(cmdp) > 0:
            return cmdp
        log.info("seed %d gave no Slater point, retrying", seed + offset)
    raise ConfigurationError(f"no strictly feasible instance in {max_tries} tries from seed {seed}")


@dataclass(frozen=True)
class ExperimentSpec:
    seed: int = 0
    states: int = 10
    actions: int = 5
    constraints: int = 2
    gamma: float = 0.9
    threshold_fraction: float = 0.6
    instance: str | None = None  # JSON file; overrides the generator fields
    epsilon: float = 0.05
    etas: tuple = DEFAULT_ETAS
    pdo_tau: float = UNREGULARIZED_TAU
    pdo_delta: float = 1e-8
    inner: str = "softq"
    guaranteed: bool = False
    repetitions: int = 1
    output_dir: str = "."
    jobs: int = 1

    def __post_init__(self):
        if self.repetitions < 1 or self.jobs < 1:
            raise ConfigurationError("repetitions and jobs must be >= 1")
        if not self.epsilon > 0:
            raise ConfigurationError("epsilon must be > 0")
        if not self.etas or min(self.etas) <= 0:
            raise ConfigurationError("etas must be a non-empty list of positive step sizes")

    def load(self, rep: int = 0) -> TabularCmdp:
        if self.instance is not None:
            return load_cmdp(self.instance)
        return gen_random_cmdp(self.seed + rep, self.states, self.actions, self.constraints,
                               self.gamma, self.threshold_fraction)


def default_jobs() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return 1
    try:
        jobs = int(raw)
    except ValueError:
        raise ConfigurationError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if jobs < 1:
        raise ConfigurationError(f"{THREADS_ENV} must be >= 1")
    return jobs


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.12g}"


def trace_rows(trace: RunTrace, v_star: float, label: str, attr: str = "output_values") -> list:
    """One CSV row per outer iteration; ``attr`` picks the output or the iterate values."""
    rows = []
    for rec in trace.records:
        vals = getattr(rec, attr)
        rows.append((label, rec.t, rec.oracle_calls, float(vals[0]), trace.gap(v_star, vals),
                     trace.violation(vals), float(np.linalg.norm(rec.lam)), rec.lam_step_norm))
    return rows


def write_csv(rows, path=None) -> str:
    """Sort rows, format them and write to ``path`` (if given). Returns the CSV text."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for row in sorted(rows, key=lambda r: (r[0], r[1])):
        w.writerow([row[0]] + [_fmt(x) for x in row[1:]])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def read_csv(path) -> dict:
    """Group a trace CSV by solver: {solver: {column: np.ndarray}}."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise ConfigurationError(f"{path}: unexpected columns {reader.fieldnames}")
        groups = {}
        for row in reader:
            groups.setdefault(row["solver"], []).append(row)
    return {s: {c: np.array([float(r[c]) for r in rs]) for c in CSV_COLUMNS[1:]}
            for s, rs in groups.items()}


def first_reach(rows, solver: str, epsilon: float):
    """Oracle calls at the first row of ``solver`` with gap and violation <= epsilon."""
    for row in sorted((r for r in rows if r[0] == solver), key=lambda r: r[1]):
        if row[4] <= epsilon and row[5] <= epsilon:
            return row[2]
    return None


def pdo_label(eta: float, kind: str) -> str:
    return f"pdo_{kind}[eta={eta:.3e}]"


def _pdo_job(args):
    cmdp, config, v_star, epsilon, call_limit = args
    stop = None
    if call_limit is not None:
        # Stop once PDO reached the target or has spent more than the limit.
        def stop(rec):
            c = cmdp.thresholds
            for vals in (rec.values, rec.output_values):
                if v_star - vals[0] <= epsilon and np.sum(np.clip(c - vals[1:], 0, None)) <= epsilon:
                    return True
            return rec.oracle_calls > call_limit
    _, trace = run_pdo(cmdp, config, stop=stop)
    return (trace_rows(trace, v_star, pdo_label(config.eta, "avg"))
            + trace_rows(trace, v_star, pdo_label(config.eta, "last"), attr="values"))


@dataclass
class BenchmarkResult:
    v_star: float
    arcpo_config: ArCpoConfig
    rows: list = field(default_factory=list)
    arcpo_trace: RunTrace | None = None

    def reach(self, epsilon: float) -> dict:
        """First oracle-call count reaching epsilon for every solver label (None if never)."""
        return {s: first_reach(self.rows, s, epsilon) for s in sorted({r[0] for r in self.rows})}

    def best_pdo(self, epsilon: float):
        calls = [c for s, c in self.reach(epsilon).items() if s.startswith("pdo") and c is not None]
        return min(calls) if calls else None


def benchmark(cmdp: TabularCmdp, epsilon: float, etas=DEFAULT_ETAS, *, pdo_tau=UNREGULARIZED_TAU,
              pdo_delta=1e-8, inner="softq", seed=0, jobs=1, race=False, guaranteed=False,
              arcpo_config: ArCpoConfig = None) -> BenchmarkResult:
    """AR-CPO under the epsilon schedule against PDO over a grid of step sizes.

    Each PDO run gets the same total inner-oracle budget as the AR-CPO run.
    With ``race=True`` a PDO run instead stops as soon as it reaches epsilon or
    has spent more calls than AR-CPO needed to reach it.
    """
    cert = solve_cmdp_lp(cmdp)
    if not cert.feasible:
        raise SolverError("instance is infeasible; nothing to benchmark")
    v_star = cert.optimal_value
    stats = reward_stats(cmdp)
    config = arcpo_config or corollary1_schedule(cmdp, epsilon, cert.slater_margin, stats=stats,
                                                 seed=seed, inner=inner, guaranteed=guaranteed)
    _, trace = run_arcpo(cmdp, config, stats)
    result = BenchmarkResult(v_star=v_star, arcpo_config=config, arcpo_trace=trace)
    result.rows = trace_rows(trace, v_star, "arcpo")
    arc_reach = first_reach(result.rows, "arcpo", epsilon)

    per_iter = iteration_budget(stats, cmdp.discount, pdo_delta, pdo_tau, 1.0)
    per_iter = per_iter + 1 if inner == "npg" else max(per_iter, 1)
    budget = trace.oracle_calls
    T_pdo = max(1, math.ceil(budget / per_iter))
    limit = None
    if race:
        limit = arc_reach if arc_reach is not None else budget
    jobs_args = [(cmdp, PdoConfig(T=T_pdo, eta=eta, tau=pdo_tau, delta=pdo_delta, inner=inner),
                  v_star, epsilon, limit) for eta in etas]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outs = list(pool.map(_pdo_job, jobs_args))
    else:
        outs = [_pdo_job(a) for a in jobs_args]
    for rows in outs:
        result.rows.extend(rows)
    return result


def run_experiment(spec: ExperimentSpec) -> list:
    """Run every repetition of ``spec``, writing one CSV per instance. Returns the paths."""
    out = Path(spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for rep in range(spec.repetitions):
        cmdp = spec.load(rep)
        res = benchmark(cmdp, spec.epsilon, spec.etas, pdo_tau=spec.pdo_tau, pdo_delta=spec.pdo_delta,
                        inner=spec.inner, seed=spec.seed + rep, jobs=spec.jobs,
                        guaranteed=spec.guaranteed)
        path = out / f"benchmark_seed{spec.seed + rep}.csv"
        write_csv(res.rows, path)
        paths.append(path)
    return paths


# -- SVG ------------------------------------------------------------------

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2",
            "#7f7f7f", "#bcbd22", "#17becf")


def _log_axis(v, floor=1e-6):
    return np.log10(np.maximum(np.abs(v), floor))


def render_svg(groups: dict, epsilon: float = None, width=720, height=300) -> str:
    """Two panels (|gap| and violation, log scale) against oracle calls, one line per solver."""
    pad, panel_h = 50, (height - 3 * 20) // 2
    xs = np.concatenate([g["oracle_calls"] for g in groups.values()]) if groups else np.array([0, 1])
    x_lo, x_hi = float(xs.min()), float(max(xs.max(), xs.min() + 1))
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height + 20 * len(groups)}"'
             f' font-family="sans-serif" font-size="11">',
             f'<rect width="100%" height="100%" fill="white"/>']
    for p, (col, title) in enumerate((("gap", "|gap|"), ("violation_l1", "violation"))):
        top = 20 + p * (panel_h + 20)
        ys = [_log_axis(g[col]) for g in groups.values()]
        y_lo = min([y.min() for y in ys] + [-6.0])
        y_hi = max([y.max() for y in ys] + [0.0])

        def X(x):
            return pad + (x - x_lo) / (x_hi - x_lo) * (width - 2 * pad)

        def Y(y):
            return top + panel_h - (y - y_lo) / (y_hi - y_lo) * panel_h

        parts.append(f'<rect x="{pad}" y="{top}" width="{width - 2 * pad}" height="{panel_h}" '
                     f'fill="none" stroke="black"/>')
        parts.append(f'<text x="{pad + 4}" y="{top + 12}">{title} (log10)</text>')
        for e in range(math.ceil(y_lo), math.floor(y_hi) + 1):
            parts.append(f'<text x="{pad - 30}" y="{Y(e) + 4:.1f}">1e{e}</text>')
        if epsilon:
            ye = Y(math.log10(epsilon))
            parts.append(f'<line x1="{pad}" x2="{width - pad}" y1="{ye:.1f}" y2="{ye:.1f}" '
                         f'stroke="gray" stroke-dasharray="4 3"/>')
        for k, (name, g) in enumerate(sorted(groups.items())):
            pts = " ".join(f"{X(x):.1f},{Y(y):.1f}" for x, y in zip(g["oracle_calls"], _log_axis(g[col])))
            parts.append(f'<polyline fill="none" stroke="{_PALETTE[k % len(_PALETTE)]}" '
                         f'stroke-width="1.2" points="{pts}"/>')
    parts.append(f'<text x="{width / 2 - 40}" y="{height - 2}">oracle calls ({x_lo:.0f} to {x_hi:.0f})</text>')
    for k, name in enumerate(sorted(groups)):
        y = height + 14 + 20 * k - 10
        parts.append(f'<line x1="{pad}" x2="{pad + 20}" y1="{y}" y2="{y}" '
                     f'stroke="{_PALETTE[k % len(_PALETTE)]}" stroke-width="2"/>')
        parts.append(f'<text x="{pad + 26}" y="{y + 4}">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def plot_csv(csv_path, svg_path=None, epsilon=None, solvers=None) -> str:
    groups = read_csv(csv_path)
    if solvers:
        groups = {s: g for s, g in groups.items() if s in solvers}
    svg = render_svg(groups, epsilon)
    if svg_path is not None:
        Path(svg_path).write_text(svg)
    return svg


# -- invariant suite --------------------------------------------------------

@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def _random_policy(rng, S, A):
    return rng.dirichlet(np.ones(A), size=S)


def _check_occupancy(cmdp, rng):
    worst = 0.0
    for _ in range(5):
        pi = _random_policy(rng, cmdp.num_states, cmdp.num_actions)
        nu = occupancy(cmdp, pi)
        v = values(cmdp, pi)
        worst = max(worst, abs(nu.sum() - 1.0), flow_residual(cmdp, nu),
                    max(abs(v[i] - bellman_value(cmdp, pi, cmdp.rewards[i])) for i in range(len(v))))
        worst = max(worst, abs(state_occupancy(cmdp, pi).sum() - 1.0))
    return worst <= 1e-9, f"max residual {worst:.2e}"


def _check_contraction(cmdp, rng, tau=0.1):
    lam = rng.uniform(0, 1, cmdp.num_constraints)
    q_star = regpo_softq(cmdp, lam, tau, 1e-12).q_values
    for _ in range(200):
        q_star = soft_bellman(cmdp, lam, tau, q_star)
    q = np.zeros_like(q_star)
    worst = 0.0
    for _ in range(60):
        nxt = soft_bellman(cmdp, lam, tau, q)
        e0, e1 = np.abs(q - q_star).max(), np.abs(nxt - q_star).max()
        if e0 > 1e-10:
            worst = max(worst, e1 / e0)
        q = nxt
    return worst <= cmdp.discount + 1e-9, f"max ratio {worst:.4f} (gamma {cmdp.discount})"


def _check_regpo_agreement(cmdp, rng, tau=0.1, delta=1e-6):
    lam = rng.uniform(0, 1, cmdp.num_constraints)
    a = regpo_softq(cmdp, lam, tau, delta).policy
    b = regpo_npg(cmdp, lam, tau, delta).policy
    diff = float(np.abs(a - b).max())
    return diff <= max(10 * delta, 1e-7), f"max policy difference {diff:.2e}"


def _check_prox(cmdp, rng):
    worst = 0.0
    m = max(cmdp.num_constraints, 1)
    for _ in range(200):
        lp, lu = rng.uniform(0, 3, m), rng.uniform(0, 3, m)
        g = rng.normal(0, 3, m)
        eta, mu, B = rng.uniform(0.01, 5), rng.uniform(0, 2), rng.uniform(0.1, 1.5)
        lam = dual_prox_step(lp, lu, g, eta, mu, B)
        grad = eta * (g + mu * (lam - lu)) + (lam - lp)
        # KKT of a box-constrained separable quadratic.
        viol = np.where(lam <= 0, np.clip(-grad, 0, None),
                        np.where(lam >= 2 * B, np.clip(grad, 0, None), np.abs(grad)))
        worst = max(worst, float(viol.max()))
    return worst <= 1e-9, f"max KKT residual {worst:.2e}"


def _check_lp(cmdp, rng):
    cert = solve_cmdp_lp(cmdp)
    if not cert.feasible:
        return False, "generated instance reported infeasible"
    worst = -np.inf
    for _ in range(200):
        v = values(cmdp, _random_policy(rng, cmdp.num_states, cmdp.num_actions))
        if np.all(v[1:] >= cmdp.thresholds):
            worst = max(worst, v[0] - cert.optimal_value)
    duality = abs(cert.dual_objective - cert.optimal_value)
    ok = worst <= 1e-8 and duality <= 1e-8 and cert.feasibility_residual <= 1e-9
    return ok, f"best sampled excess {worst:.2e}, duality gap {duality:.2e}"


def _check_mixture(cmdp, rng):
    alpha, q, eta = theorem1_params(0.05, 1.0)
    config = ArCpoConfig(T=25, eta=eta, alpha=alpha, q=q, tau=0.1, mu=0.05, delta=1e-6, B=2.0)
    pi, trace = run_arcpo(cmdp, config)
    predicted = np.tensordot(trace.weights, [r.values for r in trace.records], axes=1)
    err = float(np.abs(values(cmdp, pi) - predicted).max())
    err2 = float(np.abs(trace.records[-1].output_values - predicted).max())
    return max(err, err2) <= 1e-8 and abs(trace.weights.sum() - 1) <= 1e-12, f"max error {max(err, err2):.2e}"


def _check_determinism(seed, S, A, m):
    a = gen_random_cmdp(seed, S, A, m).to_dict()
    b = gen_random_cmdp(seed, S, A, m).to_dict()
    return a == b, "identical" if a == b else "instances differ"


CHECKS = (
    ("occupancy", _check_occupancy),
    ("softq_contraction", _check_contraction),
    ("regpo_agreement", _check_regpo_agreement),
    ("prox_step_kkt", _check_prox),
    ("lp_dominance", _check_lp),
    ("mixture_identity", _check_mixture),
)


def verify(seeds=(0, 1, 2), S=5, A=3, m=2, gamma=0.9) -> list:
    """Run the invariant suite on generated instances. Returns CheckResult per (check, seed)."""
    results = []
    for seed in seeds:
        cmdp = gen_random_cmdp(seed, S, A, m, gamma)
        rng = np.random.default_rng(seed)
        for name, check in CHECKS:
            try:
                ok, detail = check(cmdp, rng)
            except Exception as exc:  # a crash is a failed check, not a crashed suite
                ok, detail = False, f"{type(exc).__name__}: {exc}"
            results.append(CheckResult(f"{name}[seed={seed}]", bool(ok), detail))
        ok, detail = _check_determinism(seed, S, A, m)
        results.append(CheckResult(f"generator_determinism[seed={seed}]", ok, detail))
    return results
