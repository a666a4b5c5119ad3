"""Command-line interface: ``cmdp-accel {solve,benchmark,check-smoothness,verify,plot}``.

Exit codes: 0 success, 1 solver error, 2 invalid input.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .arcpo import ArCpoConfig, corollary1_schedule, estimate_dual_smoothness, run_arcpo
from .errors import CmdpError, ConfigurationError, InvalidCmdpError, SolverError
from .harness import (
    DEFAULT_ETAS,
    ExperimentSpec,
    default_jobs,
    gen_random_cmdp,
    plot_csv,
    run_experiment,
    trace_rows,
    verify,
    write_csv,
)
from .mdp import load_cmdp, reward_stats, values
from .oracle import solve_cmdp_lp
from .pdo import UNREGULARIZED_TAU, PdoConfig, run_pdo

EXIT_OK, EXIT_SOLVER, EXIT_INPUT = 0, 1, 2


def _add_instance_args(p, required=False):
    p.add_argument("--instance", help="CMDP JSON file (overrides the generator flags)", required=required)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--states", type=int, default=10)
    p.add_argument("--actions", type=int, default=5)
    p.add_argument("--constraints", type=int, default=2)
    p.add_argument("--gamma", type=float, default=0.9)
    p.add_argument("--threshold-fraction", type=float, default=0.6)


def _instance(args):
    if args.instance:
        return load_cmdp(args.instance)
    return gen_random_cmdp(args.seed, args.states, args.actions, args.constraints,
                           args.gamma, args.threshold_fraction)


def _cmd_solve(args):
    cmdp = _instance(args)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.instance).stem if args.instance else f"seed{args.seed}"
    cert = solve_cmdp_lp(cmdp)
    if args.solver == "lp" or not cert.feasible:
        path = Path(args.instance).with_suffix(".certificate.json") if args.instance else out / f"{stem}.certificate.json"
        path.write_text(cert.to_json())
        print(cert.to_json())
        if not cert.feasible:
            print("instance is infeasible", file=sys.stderr)
            return EXIT_SOLVER
        return EXIT_OK
    stats = reward_stats(cmdp)
    if args.solver == "arcpo":
        config = corollary1_schedule(cmdp, args.epsilon, cert.slater_margin, stats=stats, seed=args.seed,
                                     inner=args.inner, guaranteed=args.guaranteed)
        if args.T is not None:
            config = ArCpoConfig(**{**config.__dict__, "T": args.T})
        pi, trace = run_arcpo(cmdp, config, stats)
    else:
        T = args.T if args.T is not None else 1000
        pi, trace = run_pdo(cmdp, PdoConfig(T=T, eta=args.eta, tau=args.tau, inner=args.inner), stats)
    write_csv(trace_rows(trace, cert.optimal_value, args.solver), out / f"{stem}.{args.solver}.csv")
    v = values(cmdp, pi)
    summary = {"solver": args.solver, "optimal_value": cert.optimal_value, "V": v.tolist(),
               "gap": trace.gap(cert.optimal_value), "violation_l1": trace.violation(),
               "outer_iterations": len(trace), "oracle_calls": trace.oracle_calls,
               "policy": pi.tolist()}
    (out / f"{stem}.{args.solver}.json").write_text(json.dumps(summary, indent=1))
    print(json.dumps({k: summary[k] for k in summary if k != "policy"}, indent=1))
    return EXIT_OK


def _cmd_benchmark(args):
    spec = ExperimentSpec(seed=args.seed, states=args.states, actions=args.actions,
                          constraints=args.constraints, gamma=args.gamma,
                          threshold_fraction=args.threshold_fraction, instance=args.instance,
                          epsilon=args.epsilon, etas=tuple(args.etas), pdo_tau=args.pdo_tau,
                          inner=args.inner, guaranteed=args.guaranteed, repetitions=args.repetitions,
                          output_dir=args.output_dir, jobs=args.jobs or default_jobs())
    for path in run_experiment(spec):
        print(path)
    return EXIT_OK


def _cmd_smoothness(args):
    cmdp = _instance(args)
    print("tau,estimate")
    for tau in args.taus:
        est = estimate_dual_smoothness(cmdp, tau, args.mu, args.lines, args.box, args.seed)
        print(f"{tau:.6g},{est:.6g}")
    return EXIT_OK


def _cmd_verify(args):
    results = verify(seeds=range(args.seed, args.seed + args.instances), S=args.states,
                     A=args.actions, m=args.constraints, gamma=args.gamma)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.detail}")
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_SOLVER


def _cmd_plot(args):
    plot_csv(args.csv, args.output, args.epsilon, args.solvers)
    print(args.output)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cmdp-accel", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve one instance and emit a certificate or trace")
    _add_instance_args(p)
    p.add_argument("--solver", choices=("lp", "arcpo", "pdo"), default="lp")
    p.add_argument("--epsilon", type=float, default=0.05)
    p.add_argument("--eta", type=float, default=0.1, help="PDO step size")
    p.add_argument("--tau", type=float, default=UNREGULARIZED_TAU, help="PDO inner regulariser")
    p.add_argument("--T", type=int, default=None, help="outer iterations (overrides the schedule)")
    p.add_argument("--inner", choices=("softq", "npg"), default="softq")
    p.add_argument("--guaranteed", action="store_true",
                   help="tighten the AR-CPO schedule so its proven bounds meet epsilon")
    p.add_argument("--output-dir", default=".")
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("benchmark", help="AR-CPO against PDO over a step-size grid")
    _add_instance_args(p)
    p.add_argument("--epsilon", type=float, default=0.05)
    p.add_argument("--etas", type=float, nargs="+", default=list(DEFAULT_ETAS))
    p.add_argument("--pdo-tau", type=float, default=UNREGULARIZED_TAU)
    p.add_argument("--inner", choices=("softq", "npg"), default="softq")
    p.add_argument("--guaranteed", action="store_true",
                   help="tighten the AR-CPO schedule so its proven bounds meet epsilon")
    p.add_argument("--repetitions", type=int, default=1)
    p.add_argument("--jobs", type=int, default=None, help="parallel PDO runs (default $CMDP_ACCEL_THREADS or 1)")
    p.add_argument("--output-dir", default=".")
    p.set_defaults(func=_cmd_benchmark)

    p = sub.add_parser("check-smoothness", help="dual smoothness estimate over a tau sweep")
    _add_instance_args(p)
    p.add_argument("--taus", type=float, nargs="+", default=[0.05, 0.1, 0.2])
    p.add_argument("--mu", type=float, default=0.0)
    p.add_argument("--lines", type=int, default=20, help="random segments scanned")
    p.add_argument("--box", type=float, default=None, help="B of the box [0, 2B]^m (default: dual bound)")
    p.set_defaults(func=_cmd_smoothness)

    p = sub.add_parser("verify", help="run the invariant suite on seeded instances")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=3)
    p.add_argument("--states", type=int, default=5)
    p.add_argument("--actions", type=int, default=3)
    p.add_argument("--constraints", type=int, default=2)
    p.add_argument("--gamma", type=float, default=0.9)
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("plot", help="render gap/violation curves from a trace CSV to SVG")
    p.add_argument("csv")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--solvers", nargs="+", default=None, help="subset of solver labels to draw")
    p.set_defaults(func=_cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InvalidCmdpError, ConfigurationError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (SolverError, CmdpError, np.linalg.LinAlgError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
