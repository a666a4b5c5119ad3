"""Accelerated primal-dual solvers for tabular constrained MDPs."""

from .arco import (
    ArcoConfig,
    ArcoResult,
    ConstrainedProblem,
    dual_k0,
    kkt_example,
    load_quadratic_problem,
    quadratic_problem,
    run_arco,
)
from .arcpo import (
    ArCpoConfig,
    Diminishing,
    RunTrace,
    TraceRecord,
    corollary1_schedule,
    dual_bound,
    dual_grad_estimate,
    dual_prox_step,
    estimate_dual_smoothness,
    mix_occupancies,
    mix_policies,
    output_weights,
    run_arcpo,
    schedule_weights,
    theorem1_bounds,
    theorem1_params,
)
from .errors import CmdpError, ConfigurationError, InvalidCmdpError, InvalidPolicyError, SolverError
from .harness import ExperimentSpec, benchmark, gen_random_cmdp, verify
from .mdp import (
    RewardStats,
    TabularCmdp,
    bellman_value,
    combined_reward,
    entropy_value,
    load_cmdp,
    occupancy,
    regularized_lagrangian,
    reward_stats,
    save_cmdp,
    state_occupancy,
    value,
    values,
)
from .oracle import Infeasible, SolveCertificate, enumerate_deterministic, max_value, slater_margin, solve_cmdp_lp
from .pdo import PdoConfig, run_pdo
from .regpo import RegpoResult, iteration_budget, regpo_npg, regpo_softq, soft_bellman

__version__ = "0.1.0"
