"""Parametric MPC as a function approximator for Q, V and the policy.

``MpcParameters`` collects everything a learner may adjust: quadratic
initial, stage and terminal costs, the model, the steady-state reference,
the terminal feedback used by the stability projection, and polyhedral
input/path constraints.  ``evaluate_q`` pins both the initial state and the
first control; dropping the control pin yields the policy and value.

``parameter_gradient`` differentiates the optimal value with respect to the
parameters through the problem Lagrangian at a fixed active set, which is
exact under strict complementarity; weakly active constraints raise
:class:`DegenerateActiveSet` so the learner can skip the sample.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable

import numpy as np

from .errors import DegenerateActiveSet, Infeasible
from .ocp import AffineModel, MpcSolution, NonlinearModel, Ocp, solve_ocp

GRADIENT_COMPONENTS = (
    "initial_mat", "initial_vec", "initial_offset", "stage_cost",
    "terminal_cost", "x_ref", "u_ref", "model_shift",
)


@dataclass(frozen=True)
class MpcParameters:
    """Learnable data of the MPC approximator.

    The stage cost acts on deviations from the reference ``(x_ref, u_ref)``;
    the initial cost acts on ``x_0 - x_ref`` when ``initial_about_reference``
    (the nominal formulations) or on raw ``x_0`` (the tube formulation).
    Exactly one terminal condition applies: a quadratic cost or a point
    constraint ``x_N = x_ref``.
    """

    model: AffineModel | NonlinearModel
    horizon: int
    stage_cost: np.ndarray
    x_ref: np.ndarray
    u_ref: np.ndarray
    initial_mat: np.ndarray
    initial_vec: np.ndarray
    initial_offset: float
    terminal_cost: np.ndarray | None = None
    terminal_point: bool = False
    terminal_feedback: np.ndarray | None = None
    initial_about_reference: bool = True
    input_mat: np.ndarray | None = None          # E u <= f
    input_vec: np.ndarray | None = None
    path_mat_x: np.ndarray | None = None         # C x + D u + c_hat <= 0
    path_mat_u: np.ndarray | None = None
    path_offset: np.ndarray | None = None

    def __post_init__(self):
        n, m = self.model.n, self.model.m
        object.__setattr__(self, "stage_cost", _sym(np.asarray(self.stage_cost, dtype=float)))
        object.__setattr__(self, "x_ref", np.asarray(self.x_ref, dtype=float).reshape(n))
        object.__setattr__(self, "u_ref", np.asarray(self.u_ref, dtype=float).reshape(m))
        object.__setattr__(self, "initial_mat", _sym(np.atleast_2d(np.asarray(self.initial_mat, dtype=float))))
        object.__setattr__(self, "initial_vec", np.asarray(self.initial_vec, dtype=float).reshape(n))
        if self.terminal_cost is not None:
            object.__setattr__(self, "terminal_cost", _sym(np.atleast_2d(np.asarray(self.terminal_cost, dtype=float))))
        if self.terminal_cost is None and not self.terminal_point:
            raise ValueError("either a terminal cost or a terminal point constraint is required")

    @property
    def n(self) -> int:
        return self.model.n

    @property
    def m(self) -> int:
        return self.model.m

    def with_updates(self, **kwargs) -> "MpcParameters":
        return replace(self, **kwargs)


def _sym(mat: np.ndarray) -> np.ndarray:
    return 0.5 * (mat + mat.T)


def build_ocp(params: MpcParameters) -> Ocp:
    return Ocp(
        model=params.model,
        horizon=params.horizon,
        stage_cost=params.stage_cost,
        x_ref=params.x_ref,
        u_ref=params.u_ref,
        initial_mat=params.initial_mat,
        initial_vec=params.initial_vec,
        initial_offset=params.initial_offset,
        initial_about_reference=params.initial_about_reference,
        terminal_cost=params.terminal_cost,
        terminal_point=params.terminal_point,
        input_mat=params.input_mat,
        input_vec=params.input_vec,
        path_mat_x=params.path_mat_x,
        path_mat_u=params.path_mat_u,
        path_offset=params.path_offset,
    )


def input_feasible(params: MpcParameters, a, tol: float = 1e-9) -> bool:
    """Whether an action satisfies the known actuator constraints."""
    if params.input_mat is None:
        return True
    e_mat = np.atleast_2d(np.asarray(params.input_mat, dtype=float))
    f_vec = np.asarray(params.input_vec, dtype=float)
    return bool((e_mat @ np.asarray(a, dtype=float).reshape(params.m) - f_vec
                 <= tol * (1.0 + np.abs(f_vec))).all())


def evaluate_q(
    params: MpcParameters, s, a, *, ocp: Ocp | None = None,
    warm: MpcSolution | None = None, certify: bool = True,
) -> tuple[float, MpcSolution]:
    """Optimal cost with both the initial state and first control pinned.

    Actions violating the actuator constraints, and infeasible problems,
    return ``+inf`` with an ``infeasible`` solution object.
    """
    if not input_feasible(params, a):
        return np.inf, MpcSolution.infeasible()
    ocp = ocp if ocp is not None else build_ocp(params)
    try:
        sol = solve_ocp(ocp, s, a, warm=warm, certify=certify)
    except Infeasible:
        return np.inf, MpcSolution.infeasible()
    return sol.objective, sol


def evaluate_policy_and_value(
    params: MpcParameters, s, *, ocp: Ocp | None = None,
    warm: MpcSolution | None = None, certify: bool = True,
) -> tuple[np.ndarray | None, float, MpcSolution]:
    """First optimal control and optimal cost with only the state pinned."""
    ocp = ocp if ocp is not None else build_ocp(params)
    try:
        sol = solve_ocp(ocp, s, None, warm=warm, certify=certify)
    except Infeasible:
        return None, np.inf, MpcSolution.infeasible()
    action = sol.controls[0].copy() if params.horizon > 0 else None
    return action, sol.objective, sol


def parameter_gradient(
    params: MpcParameters,
    s,
    a,
    *,
    solution: MpcSolution | None = None,
    components: Iterable[str] = GRADIENT_COMPONENTS,
    degeneracy_tol: float = 1e-7,
) -> dict[str, np.ndarray | float]:
    """Gradient of the pinned-action optimal cost with respect to parameters.

    Differentiates the Lagrangian at the primal-dual solution holding the
    active set fixed.  Matrix components return full (symmetric) gradient
    matrices.  Raises :class:`DegenerateActiveSet` when an inequality is
    weakly active within ``degeneracy_tol``, and :class:`Infeasible` when
    the underlying solve is infeasible.
    """
    if solution is None:
        q_val, solution = evaluate_q(params, s, a)
        if not np.isfinite(q_val):
            raise Infeasible("cannot differentiate an infeasible problem")
    sol = solution
    if sol.status != "solved":
        raise Infeasible("cannot differentiate an infeasible problem")
    _check_strict_complementarity(params, sol, degeneracy_tol)

    n, N = params.n, params.horizon
    s = np.asarray(s, dtype=float).reshape(n)
    states, controls = sol.states, sol.controls
    dev_x = states[:N] - params.x_ref
    dev_u = controls - params.u_ref
    grads: dict[str, np.ndarray | float] = {}
    for comp in components:
        if comp == "initial_offset":
            grads[comp] = 1.0
        elif comp == "initial_vec":
            center = params.x_ref if params.initial_about_reference else 0.0
            grads[comp] = s - center
        elif comp == "initial_mat":
            center = params.x_ref if params.initial_about_reference else 0.0
            d0 = s - center
            grads[comp] = np.outer(d0, d0)
        elif comp == "stage_cost":
            dev = np.hstack([dev_x, dev_u])          # (N, n+m)
            grads[comp] = dev.T @ dev
        elif comp == "terminal_cost":
            if params.terminal_cost is None:
                continue
            d_n = states[N] - params.x_ref
            grads[comp] = np.outer(d_n, d_n)
        elif comp == "x_ref":
            grad = np.zeros(n)
            hxx = params.stage_cost[:n, :n]
            hxu = params.stage_cost[:n, n:]
            grad += -2.0 * (dev_x @ hxx + dev_u @ hxu.T).sum(axis=0)
            if params.initial_about_reference:
                grad += -2.0 * params.initial_mat @ (s - params.x_ref) - params.initial_vec
            if params.terminal_cost is not None and not params.terminal_point:
                grad += -2.0 * params.terminal_cost @ (states[N] - params.x_ref)
            if params.terminal_point and sol.point_mult is not None:
                grad += -sol.point_mult
            grads[comp] = grad
        elif comp == "u_ref":
            hxu = params.stage_cost[:n, n:]
            huu = params.stage_cost[n:, n:]
            grads[comp] = -2.0 * (dev_x @ hxu + dev_u @ huu).sum(axis=0)
        elif comp == "model_shift":
            grads[comp] = (-sol.costates.sum(axis=0)
                           if sol.costates is not None else np.zeros(n))
        else:
            raise ValueError(f"unknown gradient component {comp!r}")
    return grads


def _check_strict_complementarity(params: MpcParameters, sol: MpcSolution, tol: float):
    """Weakly active inequalities make the fixed-active-set gradient invalid."""
    checks = []
    if params.input_mat is not None and sol.input_mult is not None:
        e_mat = np.atleast_2d(params.input_mat)
        f_vec = np.asarray(params.input_vec, dtype=float)
        slack = f_vec - sol.controls @ e_mat.T
        checks.append((slack, sol.input_mult))
    if params.path_mat_x is not None and sol.path_mult is not None:
        c_mat = np.atleast_2d(params.path_mat_x)
        d_mat = np.atleast_2d(params.path_mat_u)
        off = np.asarray(params.path_offset, dtype=float)
        off_k = off if off.ndim == 2 else np.tile(off, (params.horizon, 1))
        slack = -(sol.states[:params.horizon] @ c_mat.T + sol.controls @ d_mat.T + off_k)
        checks.append((slack, sol.path_mult))
    for slack, mult in checks:
        weak = (np.abs(slack) < tol) & (np.abs(mult) < tol)
        if np.any(weak):
            raise DegenerateActiveSet(
                "an inequality is weakly active; sample should be skipped"
            )


# ---------------------------------------------------------------------------
# continuously stirred tank reactor benchmark

CSTR_RATE = 0.4          # l/(mol min)
CSTR_FEED_A = 1.0        # mol/l
CSTR_FEED_B = 0.0        # mol/l
CSTR_VOLUME = 10.0       # l, fixed by the steady state (0.5, 0.5) at q = 4
CSTR_SAMPLE_TIME = 1.0   # min


def _cstr_rhs(state: np.ndarray, q: float):
    c_a, c_b = state
    dil = q / CSTR_VOLUME
    rhs = np.array([
        dil * (CSTR_FEED_A - c_a) - CSTR_RATE * c_a,
        dil * (CSTR_FEED_B - c_b) + CSTR_RATE * c_a,
    ])
    jac_x = np.array([[-dil - CSTR_RATE, 0.0], [CSTR_RATE, -dil]])
    jac_u = np.array([(CSTR_FEED_A - c_a) / CSTR_VOLUME,
                      (CSTR_FEED_B - c_b) / CSTR_VOLUME])
    return rhs, jac_x, jac_u


def cstr_step(state, q, substeps: int = 10):
    """One sampling interval of the reactor ODE by fixed-step RK4."""
    x = np.asarray(state, dtype=float).reshape(2)
    q = float(np.asarray(q).reshape(()))
    h = CSTR_SAMPLE_TIME / substeps
    for _ in range(substeps):
        k1, _, _ = _cstr_rhs(x, q)
        k2, _, _ = _cstr_rhs(x + 0.5 * h * k1, q)
        k3, _, _ = _cstr_rhs(x + 0.5 * h * k2, q)
        k4, _, _ = _cstr_rhs(x + h * k3, q)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return x


def cstr_step_jacobian(state, q, substeps: int = 10):
    """RK4 step together with exact Jacobians propagated through the stages."""
    x = np.asarray(state, dtype=float).reshape(2)
    q = float(np.asarray(q).reshape(()))
    h = CSTR_SAMPLE_TIME / substeps
    a_tot = np.eye(2)
    b_tot = np.zeros(2)
    for _ in range(substeps):
        k1, j1x, j1u = _cstr_rhs(x, q)
        x2 = x + 0.5 * h * k1
        k2, j2x, j2u = _cstr_rhs(x2, q)
        x3 = x + 0.5 * h * k2
        k3, j3x, j3u = _cstr_rhs(x3, q)
        x4 = x + h * k3
        k4, j4x, j4u = _cstr_rhs(x4, q)

        k1x, k1u = j1x, j1u
        k2x = j2x @ (np.eye(2) + 0.5 * h * k1x)
        k2u = j2u + j2x @ (0.5 * h * k1u)
        k3x = j3x @ (np.eye(2) + 0.5 * h * k2x)
        k3u = j3u + j3x @ (0.5 * h * k2u)
        k4x = j4x @ (np.eye(2) + h * k3x)
        k4u = j4u + j4x @ (h * k3u)

        step_x = np.eye(2) + (h / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
        step_u = (h / 6.0) * (k1u + 2.0 * k2u + 2.0 * k3u + k4u)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        b_tot = step_x @ b_tot + step_u
        a_tot = step_x @ a_tot
    return x, a_tot, b_tot.reshape(2, 1)


def _cstr_rhs_batch(states: np.ndarray, qs: np.ndarray):
    c_a = states[:, 0]
    c_b = states[:, 1]
    dil = qs / CSTR_VOLUME
    rhs = np.stack([
        dil * (CSTR_FEED_A - c_a) - CSTR_RATE * c_a,
        dil * (CSTR_FEED_B - c_b) + CSTR_RATE * c_a,
    ], axis=1)
    k = states.shape[0]
    jac_x = np.zeros((k, 2, 2))
    jac_x[:, 0, 0] = -dil - CSTR_RATE
    jac_x[:, 1, 0] = CSTR_RATE
    jac_x[:, 1, 1] = -dil
    jac_u = np.stack([(CSTR_FEED_A - c_a) / CSTR_VOLUME,
                      (CSTR_FEED_B - c_b) / CSTR_VOLUME], axis=1)[:, :, None]
    return rhs, jac_x, jac_u


def cstr_step_jacobian_batch(states, qs, substeps: int = 10):
    """Vectorized RK4 step with Jacobians for a whole trajectory at once."""
    x = np.atleast_2d(np.asarray(states, dtype=float)).copy()
    qs = np.asarray(qs, dtype=float).reshape(x.shape[0])
    h = CSTR_SAMPLE_TIME / substeps
    k = x.shape[0]
    eye = np.broadcast_to(np.eye(2), (k, 2, 2))
    a_tot = eye.copy()
    b_tot = np.zeros((k, 2, 1))
    for _ in range(substeps):
        k1, j1x, j1u = _cstr_rhs_batch(x, qs)
        k2, j2x, j2u = _cstr_rhs_batch(x + 0.5 * h * k1, qs)
        k3, j3x, j3u = _cstr_rhs_batch(x + 0.5 * h * k2, qs)
        k4, j4x, j4u = _cstr_rhs_batch(x + h * k3, qs)

        k1x, k1u = j1x, j1u
        k2x = j2x @ (eye + 0.5 * h * k1x)
        k2u = j2u + j2x @ (0.5 * h * k1u)
        k3x = j3x @ (eye + 0.5 * h * k2x)
        k3u = j3u + j3x @ (0.5 * h * k2u)
        k4x = j4x @ (eye + h * k3x)
        k4u = j4u + j4x @ (h * k3u)

        step_x = eye + (h / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
        step_u = (h / 6.0) * (k1u + 2.0 * k2u + 2.0 * k3u + k4u)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        b_tot = step_x @ b_tot + step_u
        a_tot = step_x @ a_tot
    return x, a_tot, b_tot


def cstr_model(substeps: int = 10) -> NonlinearModel:
    """Reactor model packaged for the optimal-control layer."""

    def step_jac(x, u):
        return cstr_step_jacobian(x, float(np.asarray(u).reshape(())), substeps)

    def step_jac_batch(states, controls):
        return cstr_step_jacobian_batch(states, np.asarray(controls).reshape(-1), substeps)

    return NonlinearModel(step_jac=step_jac, n=2, m=1, step_jac_batch=step_jac_batch)


def cstr_economic_cost(state, q) -> float:
    """Economic stage cost 2 q c_A - 1.5 q (to be minimised)."""
    c_a = float(np.asarray(state, dtype=float).reshape(2)[0])
    q = float(np.asarray(q).reshape(()))
    return 2.0 * q * c_a - 1.5 * q
