"""Batch Q-learning over MPC parameters with stability projections.

The temporal-difference error pairs the true (possibly non-convex) stage
cost and the discount factor of the decision problem with the undiscounted
MPC approximator:

    delta = L(s, a) + gamma * V_theta(s') - Q_theta(s, a).

Updates are semi-gradient: ``theta <- theta + alpha * mean(delta * grad Q)``,
followed by a projection that keeps the parameters inside the certified
stabilizing set -- eigenvalue flooring of the stage cost, a terminal-cost
Lyapunov condition for the terminal feedback in the nominal case, and
noise-set / steady-state / terminal-set maintenance in the robust case.
Samples whose solves are infeasible or degenerate are skipped, never
averaged.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np
import scipy.linalg

from .errors import (
    AllSamplesSkipped,
    DegenerateActiveSet,
    EmptyTerminalSet,
    Infeasible,
    ProjectionFailure,
    SkippedSample,
)
from .mpc import MpcParameters, evaluate_policy_and_value, evaluate_q, parameter_gradient
from .tube import TubeMpcProblem, fit_noise_set, solve_tube_mpc, tube_design, tube_parameter_gradient


@dataclass(frozen=True)
class LearningConfig:
    """Hyper-parameters of a learning run; the seed pins every sample."""

    alpha: float
    n_batches: int
    batch_size: int
    n_epochs: int = 1
    seed: int = 0
    epsilon_stability: float = 1e-8
    exploration: float = 0.1

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        for name in ("n_batches", "batch_size", "n_epochs"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.epsilon_stability <= 0:
            raise ValueError("epsilon_stability must be positive")
        if self.exploration < 0:
            raise ValueError("exploration must be nonnegative")


@dataclass
class TdRecord:
    """One learning sample with its temporal-difference diagnostics."""

    state: np.ndarray
    action: np.ndarray
    next_state: np.ndarray
    stage_cost_observed: float
    td_error: float
    q_value: float


def td_error(
    params: MpcParameters,
    s,
    a,
    s_next,
    *,
    stage_cost: Callable,
    gamma: float,
    ocp=None,
    value_solution=None,
    q_warm=None,
) -> tuple[TdRecord, object]:
    """Temporal-difference error of one transition; raises
    :class:`SkippedSample` when either solve is infeasible.

    Returns the record together with the pinned-action solution (the object
    the gradient differentiates through).  ``value_solution`` may carry a
    precomputed ``(value, solution)`` pair for the successor state, and
    ``q_warm`` a warm start for the pinned-action solve.
    """
    q_val, q_sol = evaluate_q(params, s, a, ocp=ocp, warm=q_warm, certify=False)
    if not np.isfinite(q_val):
        raise SkippedSample("pinned-action solve infeasible")
    if value_solution is not None:
        v_next = value_solution[0]
    else:
        _, v_next, _ = evaluate_policy_and_value(params, s_next, ocp=ocp, certify=False)
    if not np.isfinite(v_next):
        raise SkippedSample("successor value solve infeasible")
    cost = float(stage_cost(s, a))
    delta = cost + gamma * v_next - q_val
    record = TdRecord(
        state=np.asarray(s, dtype=float).copy(),
        action=np.asarray(a, dtype=float).copy(),
        next_state=np.asarray(s_next, dtype=float).copy(),
        stage_cost_observed=cost,
        td_error=float(delta),
        q_value=float(q_val),
    )
    return record, q_sol


def _apply_gradient_step(theta: dict, grads: list, deltas: list, alpha: float) -> dict:
    out = dict(theta)
    scale = alpha / len(grads)
    for grad, delta in zip(grads, deltas):
        for key, value in grad.items():
            if key not in out:
                continue
            out[key] = out[key] + scale * delta * (
                np.asarray(value, dtype=float) if np.ndim(value) else float(value)
            )
    return out


def batch_update(
    params: MpcParameters,
    transitions: Iterable[tuple],
    cfg: LearningConfig,
    *,
    stage_cost: Callable,
    gamma: float,
    learnable: tuple[str, ...],
    projector: Callable[[MpcParameters], MpcParameters],
) -> tuple[MpcParameters, float, list[TdRecord]]:
    """One semi-gradient step over a batch, then projection.

    ``transitions`` holds ``(s, a, s_next)`` triples, optionally extended
    with a precomputed successor value and a warm start for the pinned
    solve, ``(s, a, s_next, v_next, q_warm)``.  Returns the projected
    parameters, the batch mean of ``|delta|`` over usable samples, and the
    per-sample records.  Raises :class:`AllSamplesSkipped` when no sample
    yields a usable gradient.
    """
    from .mpc import build_ocp

    ocp = build_ocp(params)
    grads, deltas, records = [], [], []
    for entry in transitions:
        s, a, s_next = entry[0], entry[1], entry[2]
        v_next = entry[3] if len(entry) > 3 else None
        q_warm = entry[4] if len(entry) > 4 else None
        try:
            record, q_sol = td_error(
                params, s, a, s_next, stage_cost=stage_cost, gamma=gamma, ocp=ocp,
                value_solution=(v_next, None) if v_next is not None else None,
                q_warm=q_warm,
            )
            grad = parameter_gradient(params, s, a, solution=q_sol, components=learnable)
        except (SkippedSample, DegenerateActiveSet, Infeasible):
            continue
        grads.append(grad)
        deltas.append(record.td_error)
        records.append(record)
    if not grads:
        raise AllSamplesSkipped("no usable sample in the batch")
    theta = {key: _get_component(params, key) for key in learnable}
    theta = _apply_gradient_step(theta, grads, deltas, cfg.alpha)
    updated = _set_components(params, theta)
    projected = projector(updated)
    mean_abs = float(np.mean(np.abs(deltas)))
    return projected, mean_abs, records


def _get_component(params: MpcParameters, key: str):
    mapping = {
        "initial_mat": params.initial_mat,
        "initial_vec": params.initial_vec,
        "initial_offset": params.initial_offset,
        "stage_cost": params.stage_cost,
        "terminal_cost": params.terminal_cost,
        "x_ref": params.x_ref,
        "u_ref": params.u_ref,
    }
    return mapping[key]


def _set_components(params: MpcParameters, theta: dict) -> MpcParameters:
    return params.with_updates(**theta)


# ---------------------------------------------------------------------------
# projections

def floor_eigenvalues(mat: np.ndarray, eps: float) -> np.ndarray:
    """Symmetric projection onto {M >= eps I}: eigenvalue flooring.

    Returns the input object unchanged (bit-stable idempotence) when every
    eigenvalue already clears the floor.
    """
    sym = 0.5 * (mat + mat.T)
    vals, vecs = np.linalg.eigh(sym)
    if vals.min() >= eps:
        return mat
    floored = np.maximum(vals, eps)
    return (vecs * floored) @ vecs.T


def lyapunov_terminal_bound(
    stage_cost: np.ndarray, a_mat, b_mat, k_f
) -> tuple[np.ndarray, np.ndarray]:
    """(A_cl, M) of the terminal decrease condition P >= A_cl' P A_cl + M
    for the linear terminal controller ``u = -K_f x``."""
    a_mat = np.atleast_2d(np.asarray(a_mat, dtype=float))
    b_mat = np.atleast_2d(np.asarray(b_mat, dtype=float))
    k_f = np.atleast_2d(np.asarray(k_f, dtype=float))
    n = a_mat.shape[0]
    a_cl = a_mat - b_mat @ k_f
    stack = np.vstack([np.eye(n), -k_f])
    m_h = stack.T @ np.asarray(stage_cost, dtype=float) @ stack
    return a_cl, 0.5 * (m_h + m_h.T)


def project_nominal(params: MpcParameters, eps: float) -> MpcParameters:
    """Projection onto the nominal certified-stability parameter set.

    Floors the stage-cost eigenvalues at ``eps``; with a quadratic terminal
    cost, scales it up minimally so the closed-loop decrease condition under
    the terminal feedback holds.  Idempotent on already-feasible parameters.
    Raises :class:`ProjectionFailure` when no finite terminal-cost scaling
    works (the terminal feedback is not stabilizing).
    """
    h_floored = floor_eigenvalues(params.stage_cost, eps)
    out = params if h_floored is params.stage_cost else params.with_updates(stage_cost=h_floored)
    if out.terminal_cost is None or out.terminal_feedback is None:
        return out
    a_model = out.model.a
    b_model = out.model.b
    a_cl, m_h = lyapunov_terminal_bound(h_floored, a_model, b_model, out.terminal_feedback)
    if float(np.abs(np.linalg.eigvals(a_cl)).max()) >= 1.0:
        raise ProjectionFailure("terminal feedback does not stabilize the model")
    p_mat = 0.5 * (out.terminal_cost + out.terminal_cost.T)
    gap = p_mat - a_cl.T @ p_mat @ a_cl
    resid = gap - m_h
    if np.linalg.eigvalsh(0.5 * (resid + resid.T)).min() >= -1e-12:
        return out
    gap_sym = 0.5 * (gap + gap.T)
    gap_vals = np.linalg.eigvalsh(gap_sym)
    if gap_vals.min() <= 0.0:
        # decrease margin vanished: rebuild P from the closed-loop Lyapunov sum
        p_new = _lyapunov_sum(a_cl, m_h)
        return out.with_updates(terminal_cost=p_new)
    # smallest beta >= 1 with beta * gap >= M, by generalized eigenvalues
    beta = float(scipy.linalg.eigh(m_h, gap_sym, eigvals_only=True).max())
    beta = max(beta, 1.0)
    return out.with_updates(terminal_cost=beta * p_mat)


def _lyapunov_sum(a_cl: np.ndarray, m_h: np.ndarray, tol: float = 1e-14) -> np.ndarray:
    total = m_h.copy()
    term = m_h.copy()
    mat = a_cl.copy()
    for _ in range(100_000):
        term = mat.T @ m_h @ mat
        total = total + term
        mat = a_cl @ mat
        if np.abs(term).max() <= tol * max(1.0, np.abs(total).max()):
            return 0.5 * (total + total.T)
    raise ProjectionFailure("terminal Lyapunov sum did not converge")


def project_steady_state(x_ref, u_ref, a_mat, b_mat, c_vec=None):
    """Orthogonal projection of (x_ref, u_ref) onto the steady-state subspace
    ``(A - I) x + B u + c = 0``."""
    a_mat = np.atleast_2d(np.asarray(a_mat, dtype=float))
    b_mat = np.atleast_2d(np.asarray(b_mat, dtype=float))
    n, m = b_mat.shape
    c_vec = np.zeros(n) if c_vec is None else np.asarray(c_vec, dtype=float).reshape(n)
    g_mat = np.hstack([a_mat - np.eye(n), b_mat])
    point = np.concatenate([np.asarray(x_ref, dtype=float).reshape(n),
                            np.asarray(u_ref, dtype=float).reshape(m)])
    resid = g_mat @ point + c_vec
    correction = g_mat.T @ np.linalg.solve(g_mat @ g_mat.T, resid)
    projected = point - correction
    return projected[:n], projected[n:]


def project_robust(
    prob: TubeMpcProblem,
    residual_log: np.ndarray,
    eps: float,
) -> TubeMpcProblem:
    """Projection onto the robust certified set.

    Floors the stage cost (recomputing the Riccati pair), refits the noise
    set so every logged residual is contained (offsets never shrink),
    projects the reference onto the steady-state subspace, and recomputes the
    tightening and terminal set.  Raises :class:`EmptyTerminalSet` when the
    terminal set empties, leaving the caller to backtrack.
    """
    from .tube import riccati_terminal_pair

    h_floored = floor_eigenvalues(prob.stage_cost, eps)
    x_ref, u_ref = project_steady_state(
        prob.x_ref, prob.u_ref, prob.a_mat, prob.b_mat, prob.c_vec
    )
    m_fit = fit_noise_set(residual_log, prob.noise_set.f_mat)
    m_new = np.maximum(prob.noise_set.g_vec, m_fit)
    changed = (
        h_floored is not prob.stage_cost
        or np.abs(x_ref - prob.x_ref).max() > 0.0
        or np.abs(u_ref - prob.u_ref).max() > 0.0
        or np.abs(m_new - prob.noise_set.g_vec).max() > 0.0
    )
    if not changed and "design" in prob._cache:
        return prob
    from .polytope import Polytope

    p_mat, k_gain = riccati_terminal_pair(prob.a_mat, prob.b_mat, h_floored)
    updated = prob.with_updates(
        stage_cost=h_floored,
        x_ref=x_ref,
        u_ref=u_ref,
        noise_set=Polytope(prob.noise_set.f_mat, m_new, normalize=False),
        p_mat=p_mat,
        k_gain=k_gain,
    )
    tube_design(updated)  # raises EmptyTerminalSet when the projection fails
    return updated


def robust_batch_update(
    prob: TubeMpcProblem,
    transitions: Iterable[tuple],
    cfg: LearningConfig,
    *,
    stage_cost: Callable,
    gamma: float,
    residual_log: np.ndarray,
    feasibility_state=None,
    max_backtracks: int = 10,
) -> tuple[TubeMpcProblem, float, int]:
    """Semi-gradient step on the tube parameters with projection and
    step-halving backtracking.

    When the projected parameters empty the terminal set (or lose QP
    feasibility at ``feasibility_state``), the step size is halved and the
    update retried from the previous feasible parameters; after
    ``max_backtracks`` halvings the previous parameters are kept.
    Returns (parameters, batch mean |delta|, accepted-flag as 0/1).
    """
    _, _, _, ocp = tube_design(prob)
    grads, deltas = [], []
    for (s, a, s_next) in transitions:
        try:
            q_sol = solve_tube_mpc(prob, s, a, certify=False)
        except Infeasible:
            continue
        try:
            _, v_next, _ = _tube_value(prob, s_next)
        except Infeasible:
            continue
        if not np.isfinite(v_next):
            continue
        delta = float(stage_cost(s, a)) + gamma * v_next - q_sol.objective
        grads.append(tube_parameter_gradient(prob, s, q_sol))
        deltas.append(delta)
    if not grads:
        raise AllSamplesSkipped("no usable sample in the batch")
    mean_abs = float(np.mean(np.abs(deltas)))
    theta = {
        "initial_mat": prob.initial_mat if prob.initial_mat is not None else np.zeros((prob.n, prob.n)),
        "initial_vec": prob.initial_vec if prob.initial_vec is not None else np.zeros(prob.n),
        "initial_offset": prob.initial_offset,
        "stage_cost": prob.stage_cost,
        "x_ref": prob.x_ref,
        "u_ref": prob.u_ref,
    }
    alpha = cfg.alpha
    for _ in range(max_backtracks):
        stepped = _apply_gradient_step(theta, grads, deltas, alpha)
        # the reference must sit on the steady-state subspace before the
        # problem object can even be built; the projection inside
        # project_robust is then a no-op safeguard
        x_ref, u_ref = project_steady_state(
            stepped["x_ref"], stepped["u_ref"], prob.a_mat, prob.b_mat, prob.c_vec
        )
        candidate = prob.with_updates(
            initial_mat=0.5 * (stepped["initial_mat"] + stepped["initial_mat"].T),
            initial_vec=stepped["initial_vec"],
            initial_offset=float(stepped["initial_offset"]),
            stage_cost=0.5 * (stepped["stage_cost"] + stepped["stage_cost"].T),
            x_ref=x_ref,
            u_ref=u_ref,
        )
        try:
            projected = project_robust(candidate, residual_log, cfg.epsilon_stability)
            if feasibility_state is not None:
                solve_tube_mpc(projected, feasibility_state)
            return projected, mean_abs, 1
        except (EmptyTerminalSet, Infeasible):
            alpha *= 0.5
    return prob, mean_abs, 0


def _tube_value(prob: TubeMpcProblem, s):
    sol = solve_tube_mpc(prob, s, certify=False)
    return sol.controls[0].copy(), sol.objective, sol
