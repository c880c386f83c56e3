"""Finite-horizon optimal control problems behind the MPC approximator.

A problem couples an affine or nonlinear model with quadratic stage,
terminal and initial costs and polyhedral input/path/terminal constraints:

    min  lam(x_0) + sum_k dev_k' H dev_k + terminal(x_N)
    s.t. x_0 = s,  (u_0 = a),  x_{k+1} = f(x_k, u_k),
         E u_k <= f,  C x_k + D u_k + off_k <= 0,  terminal constraint,

with ``dev_k = (x_k - x_ref, u_k - u_ref)``.  Affine instances become one
dense QP; instances with no inequality constraint use an equivalent Riccati
backward pass (cached per problem, so batched evaluations at a fixed
parameter vector reuse it); nonlinear instances run sequential quadratic
approximations with an l1 merit line search.

Multiplier conventions follow the QP Lagrangian ``J + y'(Az - b) + mu'(Cz - d)``,
so the multiplier of ``x_0 = s`` is minus the value gradient with respect
to ``s``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import Infeasible, MaxIterations
from .qp import QpSolution, solve_qp


@dataclass(frozen=True)
class AffineModel:
    """x+ = A x + B u + c."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.a, dtype=float))
        b = np.atleast_2d(np.asarray(self.b, dtype=float))
        c = np.asarray(self.c, dtype=float).reshape(a.shape[0])
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def m(self) -> int:
        return self.b.shape[1]

    def step(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return self.a @ x + self.b @ u + self.c

    def step_batch(self, states: np.ndarray, controls: np.ndarray) -> np.ndarray:
        return states @ self.a.T + controls @ self.b.T + self.c


@dataclass(frozen=True)
class NonlinearModel:
    """Discrete-time model given by a step map with Jacobians.

    ``step_jac(x, u) -> (x_plus, dx_plus/dx, dx_plus/du)``; the optional
    batched variant maps whole trajectories, ``(K, n), (K, m) ->
    ((K, n), (K, n, n), (K, n, m))``, and is what the sequential solver uses
    when present.
    """

    step_jac: Callable[[np.ndarray, np.ndarray], tuple]
    n: int
    m: int
    step_jac_batch: Callable | None = None

    def step(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return self.step_jac(x, u)[0]

    def step_batch(self, states: np.ndarray, controls: np.ndarray) -> np.ndarray:
        if self.step_jac_batch is not None:
            return self.step_jac_batch(states, controls)[0]
        return np.stack([self.step(x, u) for x, u in zip(states, controls)])


@dataclass
class Ocp:
    model: AffineModel | NonlinearModel
    horizon: int
    stage_cost: np.ndarray                    # (n+m, n+m) symmetric
    x_ref: np.ndarray
    u_ref: np.ndarray
    initial_mat: np.ndarray | None = None     # quadratic initial-cost matrix
    initial_vec: np.ndarray | None = None
    initial_offset: float = 0.0
    initial_about_reference: bool = True
    terminal_cost: np.ndarray | None = None
    terminal_point: bool = False
    terminal_set: tuple | None = None         # (T, t): T (x_N - x_ref) <= t
    input_mat: np.ndarray | None = None       # E u <= f
    input_vec: np.ndarray | None = None
    path_mat_x: np.ndarray | None = None      # C x + D u + off_k <= 0
    path_mat_u: np.ndarray | None = None
    path_offset: np.ndarray | None = None     # (q,) or (N, q)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        n, m = self.model.n, self.model.m
        self.stage_cost = np.asarray(self.stage_cost, dtype=float)
        if self.stage_cost.shape != (n + m, n + m):
            raise ValueError(f"stage cost must be {(n + m, n + m)}")
        self.x_ref = np.asarray(self.x_ref, dtype=float).reshape(n)
        self.u_ref = np.asarray(self.u_ref, dtype=float).reshape(m)
        if self.initial_mat is not None:
            self.initial_mat = np.atleast_2d(np.asarray(self.initial_mat, dtype=float))
        if self.initial_vec is not None:
            self.initial_vec = np.asarray(self.initial_vec, dtype=float).reshape(n)
        if self.terminal_cost is not None:
            self.terminal_cost = np.atleast_2d(np.asarray(self.terminal_cost, dtype=float))
        if self.horizon < 0:
            raise ValueError("horizon must be nonnegative")
        if self.horizon == 0 and not (self.terminal_point or self.terminal_cost is not None
                                      or self.terminal_set is not None):
            raise ValueError("zero-horizon problems need a terminal condition")

    @property
    def n(self) -> int:
        return self.model.n

    @property
    def m(self) -> int:
        return self.model.m

    @property
    def has_inequalities(self) -> bool:
        return (
            self.input_mat is not None
            or self.path_mat_x is not None
            or self.terminal_set is not None
        )

    def initial_cost_terms(self):
        """(Lam, lin, const) of the initial cost as a raw quadratic in x_0."""
        n = self.n
        lam = self.initial_mat if self.initial_mat is not None else np.zeros((n, n))
        vec = self.initial_vec if self.initial_vec is not None else np.zeros(n)
        center = self.x_ref if self.initial_about_reference else np.zeros(n)
        lin = -2.0 * lam @ center + vec
        const = float(center @ lam @ center - vec @ center + self.initial_offset)
        return lam, lin, const

    def stage_blocks(self):
        n = self.n
        h = self.stage_cost
        return h[:n, :n], h[:n, n:], h[n:, n:]

    def stage_linear_terms(self):
        """Linear and constant parts of the stage cost as a raw quadratic."""
        ref = np.concatenate([self.x_ref, self.u_ref])
        lin = -self.stage_cost @ ref
        const = float(ref @ self.stage_cost @ ref)
        return lin[: self.n], lin[self.n:], const

    def path_offset_at(self, k: int) -> np.ndarray:
        off = np.asarray(self.path_offset, dtype=float)
        return off[k] if off.ndim == 2 else off


@dataclass
class MpcSolution:
    """Trajectory, objective, multipliers and certified KKT residuals.

    ``status`` is ``solved``, ``infeasible`` or ``max_iter``; multipliers are
    None on non-solved results.  ``kkt`` holds independently recomputed
    (stationarity, feasibility, complementarity) sup-norms.
    """

    states: np.ndarray | None
    controls: np.ndarray | None
    objective: float
    status: str
    costates: np.ndarray | None = None
    init_mult: np.ndarray | None = None
    action_mult: np.ndarray | None = None
    point_mult: np.ndarray | None = None
    set_mult: np.ndarray | None = None
    input_mult: np.ndarray | None = None
    path_mult: np.ndarray | None = None
    kkt: tuple = (np.nan, np.nan, np.nan)
    active: np.ndarray | None = None
    iterations: int = 0

    @classmethod
    def infeasible(cls):
        return cls(states=None, controls=None, objective=np.inf, status="infeasible")


# ---------------------------------------------------------------------------
# dense QP assembly

def _stage_models(ocp: Ocp, states=None, controls=None):
    """Per-stage (A_k, B_k, c_k); nonlinear models linearize at a trajectory."""
    N = ocp.horizon
    if isinstance(ocp.model, AffineModel):
        return [(ocp.model.a, ocp.model.b, ocp.model.c)] * N
    if ocp.model.step_jac_batch is not None and N > 0:
        x_plus, a_all, b_all = ocp.model.step_jac_batch(states[:N], controls)
        defect = x_plus - np.einsum("kij,kj->ki", a_all, states[:N]) \
            - np.einsum("kij,kj->ki", b_all, controls)
        return [(a_all[k], b_all[k], defect[k]) for k in range(N)]
    out = []
    for k in range(N):
        x_plus, a_k, b_k = ocp.model.step_jac(states[k], controls[k])
        out.append((a_k, b_k, x_plus - a_k @ states[k] - b_k @ controls[k]))
    return out


def _build_qp(ocp: Ocp, s, a=None, stage_models=None):
    """Assemble the dense QP; returns (h, g, const, a_eq, b_eq, c_in, d_in, meta)."""
    n, m, N = ocp.n, ocp.m, ocp.horizon
    s = np.asarray(s, dtype=float).reshape(n)
    nx = (N + 1) * n
    dim = nx + N * m
    if stage_models is None:
        stage_models = _stage_models(ocp)

    def xi(k):
        return slice(k * n, (k + 1) * n)

    def ui(k):
        return slice(nx + k * m, nx + (k + 1) * m)

    h = np.zeros((dim, dim))
    g = np.zeros(dim)
    const = 0.0

    lam, lam_lin, lam_const = ocp.initial_cost_terms()
    h[xi(0), xi(0)] += 2.0 * lam
    g[xi(0)] += lam_lin
    const += lam_const

    hxx, hxu, huu = ocp.stage_blocks()
    lx, lu, l_const = ocp.stage_linear_terms()
    for k in range(N):
        h[xi(k), xi(k)] += 2.0 * hxx
        h[xi(k), ui(k)] += 2.0 * hxu
        h[ui(k), xi(k)] += 2.0 * hxu.T
        h[ui(k), ui(k)] += 2.0 * huu
        g[xi(k)] += 2.0 * lx
        g[ui(k)] += 2.0 * lu
        const += l_const
    if ocp.terminal_cost is not None and not ocp.terminal_point:
        p = ocp.terminal_cost
        h[xi(N), xi(N)] += 2.0 * p
        g[xi(N)] += -2.0 * p @ ocp.x_ref
        const += float(ocp.x_ref @ p @ ocp.x_ref)

    n_eq = n + N * n + (m if a is not None and N > 0 else 0) + (n if ocp.terminal_point else 0)
    a_eq = np.zeros((n_eq, dim))
    b_eq = np.zeros(n_eq)
    a_eq[:n, xi(0)] = np.eye(n)
    b_eq[:n] = s
    row = n
    for k, (a_k, b_k, c_k) in enumerate(stage_models):
        rows = slice(row, row + n)
        a_eq[rows, xi(k + 1)] = np.eye(n)
        a_eq[rows, xi(k)] = -a_k
        a_eq[rows, ui(k)] = -b_k
        b_eq[rows] = c_k
        row += n
    meta = {"n": n, "m": m, "N": N, "nx": nx, "action_row": None, "point_row": None}
    if a is not None and N > 0:
        a_vec = np.asarray(a, dtype=float).reshape(m)
        a_eq[row: row + m, ui(0)] = np.eye(m)
        b_eq[row: row + m] = a_vec
        meta["action_row"] = row
        row += m
    if ocp.terminal_point:
        a_eq[row: row + n, xi(N)] = np.eye(n)
        b_eq[row: row + n] = ocp.x_ref
        meta["point_row"] = row
        row += n

    blocks = []
    q_u = q_p = q_t = 0
    if ocp.input_mat is not None:
        e_mat = np.atleast_2d(np.asarray(ocp.input_mat, dtype=float))
        f_vec = np.asarray(ocp.input_vec, dtype=float).reshape(e_mat.shape[0])
        q_u = e_mat.shape[0]
        for k in range(N):
            c_blk = np.zeros((q_u, dim))
            c_blk[:, ui(k)] = e_mat
            blocks.append((c_blk, f_vec))
    if ocp.path_mat_x is not None:
        c_mat = np.atleast_2d(np.asarray(ocp.path_mat_x, dtype=float))
        d_mat = np.atleast_2d(np.asarray(ocp.path_mat_u, dtype=float))
        q_p = c_mat.shape[0]
        for k in range(N):
            c_blk = np.zeros((q_p, dim))
            c_blk[:, xi(k)] = c_mat
            c_blk[:, ui(k)] = d_mat
            blocks.append((c_blk, -ocp.path_offset_at(k)))
    if ocp.terminal_set is not None:
        t_mat, t_vec = ocp.terminal_set
        t_mat = np.atleast_2d(np.asarray(t_mat, dtype=float))
        t_vec = np.asarray(t_vec, dtype=float).reshape(t_mat.shape[0])
        q_t = t_mat.shape[0]
        c_blk = np.zeros((q_t, dim))
        c_blk[:, xi(N)] = t_mat
        blocks.append((c_blk, t_vec + t_mat @ ocp.x_ref))
    if blocks:
        c_in = np.vstack([blk for blk, _ in blocks])
        d_in = np.concatenate([vec for _, vec in blocks])
    else:
        c_in = np.zeros((0, dim))
        d_in = np.zeros(0)
    meta.update(q_u=q_u, q_p=q_p, q_t=q_t)
    return h, g, const, a_eq, b_eq, c_in, d_in, meta


def _extract(ocp: Ocp, qp: QpSolution, const: float, meta, h, g) -> MpcSolution:
    n, m, N, nx = meta["n"], meta["m"], meta["N"], meta["nx"]
    z = qp.x
    states = z[:nx].reshape(N + 1, n)
    controls = z[nx:].reshape(N, m) if N else np.zeros((0, m))
    objective = float(0.5 * z @ h @ z + g @ z + const)
    y = qp.eq_mult
    init_mult = y[:n]
    costates = y[n: n + N * n].reshape(N, n)
    action_mult = None
    if meta["action_row"] is not None:
        r = meta["action_row"]
        action_mult = y[r: r + m]
    point_mult = None
    if meta["point_row"] is not None:
        r = meta["point_row"]
        point_mult = y[r: r + n]
    q_u, q_p, q_t = meta["q_u"], meta["q_p"], meta["q_t"]
    z_in = qp.ineq_mult
    pos = 0
    input_mult = path_mult = set_mult = None
    if q_u:
        input_mult = z_in[pos: pos + N * q_u].reshape(N, q_u)
        pos += N * q_u
    if q_p:
        path_mult = z_in[pos: pos + N * q_p].reshape(N, q_p)
        pos += N * q_p
    if q_t:
        set_mult = z_in[pos: pos + q_t]
    return MpcSolution(
        states=states, controls=controls, objective=objective, status="solved",
        costates=costates, init_mult=init_mult, action_mult=action_mult,
        point_mult=point_mult, set_mult=set_mult, input_mult=input_mult,
        path_mult=path_mult, active=qp.active, iterations=qp.iterations,
    )


def _solve_condensed(ocp: Ocp, s, a, stage_models, warm_active, tol):
    """Solve the stage QP after eliminating the states (and a pinned first
    control) through the dynamics; recovers the full multiplier set so the
    result is indistinguishable from the full-space solve."""
    h, g, const, a_eq, b_eq, c_in, d_in, meta = _build_qp(ocp, s, a, stage_models=stage_models)
    n, m, N, nx = meta["n"], meta["m"], meta["N"], meta["nx"]
    dim = h.shape[0]
    pinned = meta["action_row"] is not None
    k0 = 1 if pinned else 0
    nu = (N - k0) * m
    z_map = np.zeros((dim, nu))
    z_off = np.zeros(dim)
    z_off[:n] = np.asarray(s, dtype=float).reshape(n)
    for idx, k in enumerate(range(k0, N)):
        z_map[nx + k * m: nx + (k + 1) * m, idx * m:(idx + 1) * m] = np.eye(m)
    if pinned:
        z_off[nx: nx + m] = np.asarray(a, dtype=float).reshape(m)
    for k, (a_k, b_k, c_k) in enumerate(stage_models):
        rows = slice((k + 1) * n, (k + 2) * n)
        prev = slice(k * n, (k + 1) * n)
        u_sl = slice(nx + k * m, nx + (k + 1) * m)
        z_map[rows] = a_k @ z_map[prev] + b_k @ z_map[u_sl]
        z_off[rows] = a_k @ z_off[prev] + b_k @ z_off[u_sl] + c_k

    h_half = h @ z_map
    h_c = z_map.T @ h_half
    h_c = 0.5 * (h_c + h_c.T)
    g_c = z_map.T @ (g + h @ z_off)
    scale = 1.0 + float(np.abs(d_in).max(initial=0.0))
    c_c = d_c = None
    live = np.zeros(0, dtype=bool)
    if c_in.size:
        c_all = c_in @ z_map
        d_all = d_in - c_in @ z_off
        live = np.linalg.norm(c_all, axis=1) > 1e-12
        if np.any(-d_all[~live] > 1e-9 * scale):
            raise Infeasible("fixed decision variables violate a constraint")
        c_c, d_c = c_all[live], d_all[live]
    a_c = b_c = None
    if ocp.terminal_point:
        row = meta["point_row"]
        a_c = a_eq[row: row + n] @ z_map
        b_c = b_eq[row: row + n] - a_eq[row: row + n] @ z_off
    warm_live = None
    if warm_active is not None and live.size and warm_active.shape == (c_in.shape[0],):
        warm_live = warm_active[live]
    qp = solve_qp(h_c, g_c, a_c, b_c, c_c, d_c, tol=tol, warm_active=warm_live)

    z_full = z_map @ qp.x + z_off
    mu_full = np.zeros(c_in.shape[0])
    active_full = np.zeros(c_in.shape[0], dtype=bool)
    if live.size:
        mu_full[live] = qp.ineq_mult
        active_full[live] = qp.active
    states = z_full[:nx].reshape(N + 1, n)
    controls = z_full[nx:].reshape(N, m)
    q_u, q_p, q_t = meta["q_u"], meta["q_p"], meta["q_t"]
    pos = 0
    mu_in = mu_path = mu_set = None
    if q_u:
        mu_in = mu_full[pos: pos + N * q_u].reshape(N, q_u)
        pos += N * q_u
    if q_p:
        mu_path = mu_full[pos: pos + N * q_p].reshape(N, q_p)
        pos += N * q_p
    if q_t:
        mu_set = mu_full[pos: pos + q_t]
    nu_point = qp.eq_mult if ocp.terminal_point else None
    costates, init_mult, action_mult = _recover_eq_multipliers(
        ocp, stage_models, states, controls, mu_in, mu_path, mu_set, nu_point, pinned
    )
    y_parts = [init_mult, costates.ravel()]
    if pinned:
        y_parts.append(action_mult)
    if ocp.terminal_point:
        y_parts.append(nu_point)
    fake = QpSolution(x=z_full, eq_mult=np.concatenate(y_parts), ineq_mult=mu_full,
                      active=active_full, iterations=qp.iterations)
    return _extract(ocp, fake, const, meta, h, g)


def _recover_eq_multipliers(ocp, stage_models, states, controls,
                            mu_in, mu_path, mu_set, nu_point, pinned):
    """Costates and pin multipliers from the stagewise stationarity
    conditions, given the inequality multipliers."""
    n, N = ocp.n, ocp.horizon
    hxx, hxu, huu = ocp.stage_blocks()
    lx, lu, _ = ocp.stage_linear_terms()
    lam, lam_lin, _ = ocp.initial_cost_terms()
    c_mat = np.atleast_2d(ocp.path_mat_x) if ocp.path_mat_x is not None else None
    d_mat = np.atleast_2d(ocp.path_mat_u) if ocp.path_mat_u is not None else None
    e_mat = np.atleast_2d(ocp.input_mat) if ocp.input_mat is not None else None

    def grad_x(k):
        return 2.0 * (hxx @ states[k] + hxu @ controls[k] + lx)

    grad_n = np.zeros(n)
    if ocp.terminal_cost is not None and not ocp.terminal_point:
        grad_n = grad_n + 2.0 * ocp.terminal_cost @ (states[N] - ocp.x_ref)
    if nu_point is not None:
        grad_n = grad_n + nu_point
    if ocp.terminal_set is not None and mu_set is not None:
        t_mat = np.atleast_2d(np.asarray(ocp.terminal_set[0], dtype=float))
        grad_n = grad_n + t_mat.T @ mu_set
    costates = np.zeros((N, n))
    costates[N - 1] = -grad_n
    for j in range(N - 1, 0, -1):
        grad = grad_x(j)
        if mu_path is not None:
            grad = grad + c_mat.T @ mu_path[j]
        costates[j - 1] = stage_models[j][0].T @ costates[j] - grad
    grad0 = grad_x(0) + 2.0 * lam @ states[0] + lam_lin
    if mu_path is not None:
        grad0 = grad0 + c_mat.T @ mu_path[0]
    init_mult = stage_models[0][0].T @ costates[0] - grad0
    action_mult = None
    if pinned:
        gu0 = 2.0 * (hxu.T @ states[0] + huu @ controls[0] + lu)
        if mu_in is not None:
            gu0 = gu0 + e_mat.T @ mu_in[0]
        if mu_path is not None:
            gu0 = gu0 + d_mat.T @ mu_path[0]
        action_mult = stage_models[0][1].T @ costates[0] - gu0
    return costates, init_mult, action_mult


# ---------------------------------------------------------------------------
# Riccati backward pass (affine model, no inequality constraints)

def _riccati_pass(ocp: Ocp):
    """Backward value recursion; cached on the problem object."""
    cached = ocp._cache.get("riccati")
    if cached is not None:
        return cached
    model = ocp.model
    a_m, b_m, c_m = model.a, model.b, model.c
    hxx, hxu, huu = ocp.stage_blocks()
    lx, lu, l_const = ocp.stage_linear_terms()
    n = ocp.n
    if ocp.terminal_point:
        raise ValueError("Riccati path does not support terminal point constraints")
    p = ocp.terminal_cost if ocp.terminal_cost is not None else np.zeros((n, n))
    s_mat = p.copy()
    q_vec = -p @ ocp.x_ref
    r_c = float(ocp.x_ref @ p @ ocp.x_ref)
    gains = []
    values = [(s_mat, q_vec, r_c)]
    for _ in range(ocp.horizon):
        sa = s_mat @ a_m
        sb = s_mat @ b_m
        qxx = hxx + a_m.T @ sa
        qxu = hxu + a_m.T @ sb
        quu = huu + b_m.T @ sb
        sc_q = s_mat @ c_m + q_vec
        qx = lx + a_m.T @ sc_q
        qu = lu + b_m.T @ sc_q
        r_new = l_const + float(c_m @ s_mat @ c_m + 2.0 * q_vec @ c_m) + r_c
        quu_inv_qxu = np.linalg.solve(quu, qxu.T)
        quu_inv_qu = np.linalg.solve(quu, qu)
        gains.append((quu_inv_qxu, quu_inv_qu, quu, qxu, qu))
        s_mat = qxx - qxu @ quu_inv_qxu
        s_mat = 0.5 * (s_mat + s_mat.T)
        q_vec = qx - qxu @ quu_inv_qu
        r_c = r_new - float(qu @ quu_inv_qu)
        values.append((s_mat, q_vec, r_c))
    gains.reverse()   # gains[k] minimizes at stage k
    values.reverse()  # values[k] is the cost-to-go from stage k (before lam)
    ocp._cache["riccati"] = (gains, values)
    return gains, values


def _riccati_solve(ocp: Ocp, s, a=None) -> MpcSolution:
    gains, values = _riccati_pass(ocp)
    model = ocp.model
    a_m, b_m, c_m = model.a, model.b, model.c
    n, m, N = ocp.n, ocp.m, ocp.horizon
    s = np.asarray(s, dtype=float).reshape(n)
    hxx, hxu, huu = ocp.stage_blocks()
    lx, lu, l_const = ocp.stage_linear_terms()
    lam, lam_lin, lam_const = ocp.initial_cost_terms()

    states = np.zeros((N + 1, n))
    controls = np.zeros((N, m))
    states[0] = s
    objective = lam_const + float(s @ lam @ s + lam_lin @ s)
    for k in range(N):
        if k == 0 and a is not None:
            controls[0] = np.asarray(a, dtype=float).reshape(m)
        else:
            k_gain, k_ff, *_ = gains[k]
            controls[k] = -(k_gain @ states[k]) - k_ff
        x_k, u_k = states[k], controls[k]
        objective += float(x_k @ hxx @ x_k + 2.0 * x_k @ hxu @ u_k + u_k @ huu @ u_k
                           + 2.0 * lx @ x_k + 2.0 * lu @ u_k) + l_const
        states[k + 1] = a_m @ x_k + b_m @ u_k + c_m
    s_t, q_t, r_t = values[N]
    x_n = states[N]
    objective += float(x_n @ s_t @ x_n + 2.0 * q_t @ x_n) + r_t

    costates = np.zeros((N, n))
    for k in range(N):
        s_k, q_k, _ = values[k + 1]
        costates[k] = -(2.0 * s_k @ states[k + 1] + 2.0 * q_k)
    grad_lx0 = 2.0 * (hxx @ states[0] + (hxu @ controls[0] if N else 0.0) + lx) if N \
        else np.zeros(n)
    grad_lam = 2.0 * lam @ states[0] + lam_lin
    init_mult = a_m.T @ costates[0] - grad_lx0 - grad_lam if N else -(
        2.0 * s_t @ x_n + 2.0 * q_t + grad_lam)
    action_mult = None
    if a is not None and N:
        grad_lu0 = 2.0 * (hxu.T @ states[0] + huu @ controls[0] + lu)
        action_mult = b_m.T @ costates[0] - grad_lu0
    return MpcSolution(
        states=states, controls=controls, objective=float(objective),
        status="solved", costates=costates, init_mult=init_mult,
        action_mult=action_mult, iterations=1,
    )


# ---------------------------------------------------------------------------
# public solver

def solve_ocp(
    ocp: Ocp,
    s,
    a=None,
    *,
    warm: MpcSolution | None = None,
    tol: float = 1e-9,
    certify: bool = True,
) -> MpcSolution:
    """Solve the finite-horizon problem from state ``s`` (pinning ``u_0 = a``
    when given).  Raises :class:`Infeasible` / :class:`MaxIterations`.

    ``certify=False`` skips the independent KKT recomputation (hot learning
    loops); the sequential-quadratic path always certifies since its own
    convergence test is the certified residual.
    """
    if isinstance(ocp.model, NonlinearModel):
        return _solve_sqp(ocp, s, a, warm=warm, tol=max(tol, 1e-9))
    if not ocp.has_inequalities and not ocp.terminal_point and ocp.horizon > 0:
        sol = _riccati_solve(ocp, s, a)
    else:
        h, g, const, a_eq, b_eq, c_in, d_in, meta = _build_qp(ocp, s, a)
        warm_active = warm.active if warm is not None else None
        if warm_active is not None and warm_active.shape != (c_in.shape[0],):
            warm_active = None
        qp = solve_qp(h, g, a_eq, b_eq, c_in if c_in.size else None,
                      d_in if d_in.size else None, tol=tol, warm_active=warm_active)
        sol = _extract(ocp, qp, const, meta, h, g)
    if certify:
        sol.kkt = solution_kkt_residuals(ocp, s, a, sol)
    return sol


def _initial_trajectory(ocp: Ocp, s, a):
    n, m, N = ocp.n, ocp.m, ocp.horizon
    states = np.zeros((N + 1, n))
    controls = np.tile(ocp.u_ref, (N, 1))
    if a is not None and N:
        controls[0] = np.asarray(a, dtype=float).reshape(m)
    if ocp.input_mat is not None:
        # crude clamp onto box-like input sets: scale rows violating E u <= f
        e_mat = np.atleast_2d(ocp.input_mat)
        f_vec = np.asarray(ocp.input_vec, dtype=float)
        for k in range(N):
            viol = e_mat @ controls[k] - f_vec
            if viol.max(initial=-1.0) > 0:
                controls[k] = controls[k] / (1.0 + viol.max())
    states[0] = np.asarray(s, dtype=float).reshape(n)
    for k in range(N):
        states[k + 1] = ocp.model.step(states[k], controls[k])
    return states, controls


def _trajectory_objective(ocp: Ocp, states, controls):
    hxx, hxu, huu = ocp.stage_blocks()
    lx, lu, l_const = ocp.stage_linear_terms()
    lam, lam_lin, lam_const = ocp.initial_cost_terms()
    x0 = states[0]
    total = lam_const + float(x0 @ lam @ x0 + lam_lin @ x0)
    if ocp.horizon:
        xs = states[: ocp.horizon]
        total += float(np.einsum("ki,ij,kj->", xs, hxx, xs))
        total += float(2.0 * np.einsum("ki,ij,kj->", xs, hxu, controls))
        total += float(np.einsum("ki,ij,kj->", controls, huu, controls))
        total += float(2.0 * (xs @ lx).sum() + 2.0 * (controls @ lu).sum())
        total += ocp.horizon * l_const
    if ocp.terminal_cost is not None and not ocp.terminal_point:
        dev = states[-1] - ocp.x_ref
        total += float(dev @ ocp.terminal_cost @ dev)
    return total


def _dynamics_defect(ocp: Ocp, states, controls):
    if ocp.horizon == 0:
        return 0.0
    stepped = ocp.model.step_batch(states[: ocp.horizon], controls)
    return float(np.abs(states[1:] - stepped).sum())


def _rollout_states(ocp: Ocp, s, controls):
    states = np.zeros((ocp.horizon + 1, ocp.n))
    states[0] = np.asarray(s, dtype=float).reshape(ocp.n)
    for k in range(ocp.horizon):
        states[k + 1] = ocp.model.step(states[k], controls[k])
    return states


def _solve_sqp(ocp: Ocp, s, a, warm=None, tol=1e-9, max_iter=60):
    """Sequential quadratic approximations in shooting form.

    States always come from integrating the candidate controls through the
    true model, so the only constraint the merit function has to police is
    the terminal one; the line search is a plain backtracking on

        objective + penalty * |terminal residual|_1.

    The condensed QP supplies the search direction and the multipliers.
    """
    if warm is not None and warm.controls is not None \
            and warm.controls.shape == (ocp.horizon, ocp.m):
        controls = warm.controls.copy()
        if a is not None and ocp.horizon:
            controls[0] = np.asarray(a, dtype=float).reshape(ocp.m)
        warm_active = warm.active
    else:
        _, controls = _initial_trajectory(ocp, s, a)
        warm_active = None
    states = _rollout_states(ocp, s, controls)
    penalty = 10.0
    best_err = np.inf
    best_kkt = None

    def merit(st, co):
        value = _trajectory_objective(ocp, st, co)
        if ocp.terminal_point:
            value += penalty * float(np.abs(st[-1] - ocp.x_ref).sum())
        return value

    for _ in range(max_iter):
        stage_models = _stage_models(ocp, states, controls)
        cand = _solve_condensed(ocp, s, a, stage_models, warm_active, tol)
        warm_active = cand.active

        # full Newton candidate, judged by the certified residual
        co_full = cand.controls
        st_full = _rollout_states(ocp, s, co_full)
        sol = cand
        sol.states, sol.controls = st_full, co_full
        sol.objective = _trajectory_objective(ocp, st_full, co_full)
        kkt = solution_kkt_residuals(ocp, s, a, sol)
        err = max(kkt)
        if err <= 1e-8:
            sol.kkt = kkt
            return sol
        if err <= 0.7 * best_err:
            best_err, best_kkt = err, kkt
            states, controls = st_full, co_full
            continue

        # globalization: an l1-merit backtracking on the true rollout
        mults = [np.abs(cand.costates).max(initial=0.0)]
        if cand.point_mult is not None:
            mults.append(np.abs(cand.point_mult).max(initial=0.0))
        penalty = max(penalty, 2.0 * float(max(mults)) + 1.0)
        merit_now = merit(states, controls)
        delta_u = co_full - controls
        step = 0.5
        accepted = None
        while step >= 2.0 ** -24:
            co = controls + step * delta_u
            st = _rollout_states(ocp, s, co)
            if merit(st, co) <= merit_now - 1e-12:
                accepted = (st, co)
                break
            step *= 0.5
        states, controls = accepted if accepted is not None else (st_full, co_full)
        if accepted is None and err > 10.0 * best_err and np.isfinite(best_err):
            break  # diverging; give up with the best residual seen
    raise MaxIterations(
        "sequential quadratic iteration did not reach tolerance",
        residuals={"kkt": best_kkt},
    )


# ---------------------------------------------------------------------------
# independent KKT certification

def solution_kkt_residuals(ocp: Ocp, s, a, sol: MpcSolution):
    """(stationarity, feasibility, complementarity) recomputed from scratch.

    Uses exact model Jacobians at the solution trajectory and the stored
    multipliers; independent of how the solution was produced.
    """
    if sol.status != "solved":
        return (np.nan, np.nan, np.nan)
    n, m, N = ocp.n, ocp.m, ocp.horizon
    states, controls = sol.states, sol.controls
    stage_models = _stage_models(ocp, states, controls)
    hxx, hxu, huu = ocp.stage_blocks()
    lx, lu, _ = ocp.stage_linear_terms()
    lam, lam_lin, _ = ocp.initial_cost_terms()

    feas = float(np.abs(states[0] - np.asarray(s, dtype=float)).max())
    if a is not None and N:
        feas = max(feas, float(np.abs(controls[0] - np.asarray(a, dtype=float)).max()))
    for k in range(N):
        feas = max(feas, float(np.abs(states[k + 1] - ocp.model.step(states[k], controls[k])).max()))
    if ocp.terminal_point:
        feas = max(feas, float(np.abs(states[N] - ocp.x_ref).max()))

    comp = 0.0
    grad_x = np.zeros((N + 1, n))
    grad_u = np.zeros((N, m))
    for k in range(N):
        dev_x = states[k]
        grad_x[k] += 2.0 * (hxx @ dev_x + hxu @ controls[k] + lx)
        grad_u[k] += 2.0 * (hxu.T @ dev_x + huu @ controls[k] + lu)
    grad_x[0] += 2.0 * lam @ states[0] + lam_lin
    if ocp.terminal_cost is not None and not ocp.terminal_point:
        grad_x[N] += 2.0 * ocp.terminal_cost @ (states[N] - ocp.x_ref)

    for k, (a_k, b_k, _) in enumerate(stage_models):
        y_k = sol.costates[k]
        grad_x[k + 1] += y_k
        grad_x[k] += -a_k.T @ y_k
        grad_u[k] += -b_k.T @ y_k
    grad_x[0] += sol.init_mult
    if sol.action_mult is not None and N:
        grad_u[0] += sol.action_mult
    if sol.point_mult is not None:
        grad_x[N] += sol.point_mult
    if ocp.input_mat is not None and sol.input_mult is not None:
        e_mat = np.atleast_2d(ocp.input_mat)
        f_vec = np.asarray(ocp.input_vec, dtype=float)
        for k in range(N):
            slack = f_vec - e_mat @ controls[k]
            feas = max(feas, float(np.maximum(-slack, 0.0).max(initial=0.0)))
            comp = max(comp, float(np.abs(sol.input_mult[k] * slack).max(initial=0.0)))
            grad_u[k] += e_mat.T @ sol.input_mult[k]
    if ocp.path_mat_x is not None and sol.path_mult is not None:
        c_mat = np.atleast_2d(ocp.path_mat_x)
        d_mat = np.atleast_2d(ocp.path_mat_u)
        for k in range(N):
            resid = c_mat @ states[k] + d_mat @ controls[k] + ocp.path_offset_at(k)
            feas = max(feas, float(np.maximum(resid, 0.0).max(initial=0.0)))
            comp = max(comp, float(np.abs(sol.path_mult[k] * resid).max(initial=0.0)))
            grad_x[k] += c_mat.T @ sol.path_mult[k]
            grad_u[k] += d_mat.T @ sol.path_mult[k]
    if ocp.terminal_set is not None and sol.set_mult is not None:
        t_mat, t_vec = ocp.terminal_set
        t_mat = np.atleast_2d(np.asarray(t_mat, dtype=float))
        resid = t_mat @ (states[N] - ocp.x_ref) - np.asarray(t_vec, dtype=float)
        feas = max(feas, float(np.maximum(resid, 0.0).max(initial=0.0)))
        comp = max(comp, float(np.abs(sol.set_mult * resid).max(initial=0.0)))
        grad_x[N] += t_mat.T @ sol.set_mult

    stat = max(float(np.abs(grad_x).max()), float(np.abs(grad_u).max(initial=0.0)))
    return stat, feas, comp
