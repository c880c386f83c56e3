"""Stability-constrained discounted MDPs via undiscounted MPC policies.

Subpackages
-----------
finite_mdp   tabular MDPs, exact dynamic programming, the equivalence transform
lqr          discounted Riccati solver and the scalar analytic benchmark
qp           dense convex QP solver and its slow independent reference
ocp / mpc    finite-horizon optimal control and the MPC function approximator
polytope     halfspace sets, support functions, 2-D exact vertex algebra
tube         tube-based robust MPC, invariant sets, noise-set fitting
qlearning    batch Q-learning with stability projections
experiments  config-driven reproduction runs (CSV + SVG), CLI entry point
"""

from .finite_mdp import (
    DpSolution,
    FiniteMdp,
    gain,
    load_mdp,
    mdp_from_text,
    mdp_to_text,
    modified_stage_cost,
    n_step_undiscounted_value,
    policy_evaluation,
    stationary_distribution,
    v_infinity,
    value_iteration,
)
from .lqr import (
    LqrProblem,
    LqrSolution,
    closed_loop_spectral_radius,
    closed_loop_value_limit,
    equivalent_undiscounted_cost,
    scalar_example_feedbacks,
    solve_discounted_dare,
    stationary_covariance,
)
from .mpc import MpcParameters, evaluate_policy_and_value, evaluate_q, parameter_gradient
from .ocp import AffineModel, MpcSolution, NonlinearModel, Ocp, solve_ocp
from .polytope import Polytope
from .qlearning import LearningConfig, TdRecord, batch_update, project_nominal, project_robust, td_error
from .qp import solve_qp
from .tube import (
    TubeMpcProblem,
    fit_noise_set,
    mrpi_outer_approx,
    solve_tube_mpc,
    support_function,
    terminal_invariant_set,
    tighten_constraints,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
