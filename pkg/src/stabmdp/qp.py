"""Dense convex quadratic programming.

    minimize   0.5 x'Hx + g'x
    subject to A x  = b
               C x <= d

The workhorse is a Mehrotra-style primal-dual interior-point method followed
by an active-set polish that re-solves the equality KKT system on the
identified active set, giving KKT residuals at round-off level and exact
zero multipliers on inactive rows.  Warm starts re-enter through the polish
loop directly, which is the fast path in the learning loops.

``reference_solve_qp`` is an intentionally independent slow-but-sure check:
accelerated projected gradient ascent on the dual, whose only projection is
clipping the inequality multipliers at zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import Infeasible, MaxIterations


@dataclass
class QpSolution:
    x: np.ndarray
    eq_mult: np.ndarray     # multipliers of A x = b
    ineq_mult: np.ndarray   # multipliers of C x <= d, zero on inactive rows
    active: np.ndarray      # boolean mask of active inequality rows
    iterations: int
    status: str = "optimal"


def kkt_residuals(h, g, a_eq, b_eq, c_in, d_in, x, y, z):
    """(stationarity, equality, inequality, complementarity) sup-norms."""
    r_stat = h @ x + g
    if a_eq is not None and a_eq.size:
        r_stat = r_stat + a_eq.T @ y
    if c_in is not None and c_in.size:
        r_stat = r_stat + c_in.T @ z
    stat = float(np.abs(r_stat).max()) if r_stat.size else 0.0
    eq = float(np.abs(a_eq @ x - b_eq).max()) if a_eq is not None and a_eq.size else 0.0
    if c_in is not None and c_in.size:
        slack = d_in - c_in @ x
        ineq = float(np.maximum(-slack, 0.0).max())
        comp = float(np.abs(z * slack).max())
    else:
        ineq = comp = 0.0
    return stat, eq, ineq, comp


def _as_2d(mat, n):
    if mat is None:
        return np.zeros((0, n))
    mat = np.asarray(mat, dtype=float)
    return mat.reshape(0, n) if mat.size == 0 else np.atleast_2d(mat)


def _solve_kkt(h, g, a_eq, b_eq):
    """Solve the equality-constrained KKT system; returns (x, y) or None
    when the system is numerically singular."""
    n = h.shape[0]
    p = a_eq.shape[0]
    if p == 0:
        try:
            x = np.linalg.solve(h, -g)
        except np.linalg.LinAlgError:
            return None
        return x, np.zeros(0)
    kkt = np.block([[h, a_eq.T], [a_eq, np.zeros((p, p))]])
    rhs = np.concatenate([-g, b_eq])
    scale = 1.0 + float(np.abs(rhs).max())
    try:
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError:
        sol = None
    if sol is None or not np.all(np.isfinite(sol)) \
            or np.abs(kkt @ sol - rhs).max() > 1e-7 * scale:
        # redundant-but-consistent working sets land here
        sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
        if not np.all(np.isfinite(sol)) or np.abs(kkt @ sol - rhs).max() > 1e-7 * scale:
            return None
    return sol[:n], sol[n:]


def _check_equalities_consistent(a_eq, b_eq):
    if a_eq.shape[0] == 0:
        return
    sol, *_ = np.linalg.lstsq(a_eq, b_eq, rcond=None)
    if np.abs(a_eq @ sol - b_eq).max() > 1e-8 * (1.0 + np.abs(b_eq).max()):
        raise Infeasible("equality constraints are inconsistent")


def _feasibility_lp(a_eq, b_eq, c_in, d_in, n):
    """LP feasibility probe used only on the failure path."""
    from scipy.optimize import linprog

    res = linprog(
        c=np.zeros(n),
        A_ub=c_in if c_in.size else None,
        b_ub=d_in if c_in.size else None,
        A_eq=a_eq if a_eq.size else None,
        b_eq=b_eq if a_eq.size else None,
        bounds=[(None, None)] * n,
        method="highs",
    )
    return res.status != 2  # 2 = infeasible


def _active_set_polish(h, g, a_eq, b_eq, c_in, d_in, active, tol, max_swaps):
    """Iterate equality-KKT solves on a working set until the KKT conditions
    hold; returns None when the loop does not settle."""
    q = c_in.shape[0]
    p = a_eq.shape[0]
    active = active.copy()
    feas_tol = tol * 10.0
    for it in range(max_swaps):
        rows = np.where(active)[0]
        a_full = np.vstack([a_eq, c_in[rows]]) if rows.size else a_eq
        b_full = np.concatenate([b_eq, d_in[rows]]) if rows.size else b_eq
        sol = _solve_kkt(h, g, a_full, b_full)
        if sol is None:
            if rows.size:
                # degenerate working set: drop the last active row and retry
                active[rows[-1]] = False
                continue
            return None
        x, y_full = sol
        y = y_full[:p]
        z = np.zeros(q)
        z[rows] = y_full[p:]
        scale = 1.0 + float(np.abs(x).max())
        slack = d_in - c_in @ x if q else np.zeros(0)
        worst_neg = None
        if rows.size:
            z_act = z[rows]
            if z_act.min() < -tol:
                worst_neg = rows[int(np.argmin(z_act))]
        worst_viol = None
        if q:
            viol = -slack
            viol[active] = -np.inf
            j = int(np.argmax(viol))
            if viol[j] > feas_tol * scale:
                worst_viol = j
        if worst_neg is None and worst_viol is None:
            return QpSolution(x=x, eq_mult=y, ineq_mult=np.maximum(z, 0.0),
                              active=active, iterations=it + 1)
        if worst_neg is not None:
            active[worst_neg] = False
        else:
            active[worst_viol] = True
    return None


def _interior_point(h, g, a_eq, b_eq, c_in, d_in, tol, max_iter):
    """Predictor-corrector interior point; returns (x, y, z, iterations)."""
    n = h.shape[0]
    p, q = a_eq.shape[0], c_in.shape[0]
    reg = 1e-12 * (1.0 + np.abs(h).max())
    sol = _solve_kkt(h + reg * np.eye(n), g, a_eq, b_eq)
    if sol is None:
        sol = _solve_kkt(h + (1.0 + np.abs(h).max()) * 1e-4 * np.eye(n), g, a_eq, b_eq)
    if sol is None:
        raise MaxIterations("interior point could not initialize")
    x, y = sol
    resid0 = d_in - c_in @ x
    s = np.maximum(np.abs(resid0), 1.0)
    z = np.ones(q)
    scale = 1.0 + max(np.abs(g).max(initial=0.0), np.abs(d_in).max(initial=0.0),
                      np.abs(b_eq).max(initial=0.0))
    best_gap = np.inf
    stall = 0
    for it in range(max_iter):
        r_d = h @ x + g + a_eq.T @ y + c_in.T @ z
        r_p = a_eq @ x - b_eq
        r_g = c_in @ x + s - d_in
        mu = float(s @ z) / q
        err = max(np.abs(r_d).max(), np.abs(r_p).max(initial=0.0),
                  np.abs(r_g).max(), mu)
        if err <= tol * scale:
            return x, y, z, it
        if err < 0.9 * best_gap:
            best_gap, stall = err, 0
        else:
            stall += 1
            if stall > 25:
                break
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            w = z / s
        if not np.all(np.isfinite(w)):
            break
        m = h + c_in.T @ (w[:, None] * c_in)
        kkt = np.block([[m, a_eq.T], [a_eq, -1e-14 * np.eye(p)]])
        try:
            lu = scipy.linalg.lu_factor(kkt)
        except (ValueError, scipy.linalg.LinAlgError):
            break

        def newton(rc):
            rhs_x = -r_d - c_in.T @ (rc / s + w * r_g)
            rhs = np.concatenate([rhs_x, -r_p])
            step = scipy.linalg.lu_solve(lu, rhs)
            dx, dy = step[:n], step[n:]
            ds = -r_g - c_in @ dx
            dz = (rc - z * ds) / s
            return dx, dy, ds, dz

        # predictor
        dx, dy, ds, dz = newton(-s * z)
        alpha_p = _max_step(s, ds)
        alpha_d = _max_step(z, dz)
        mu_aff = float((s + alpha_p * ds) @ (z + alpha_d * dz)) / q
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.1
        # corrector
        rc = sigma * mu - s * z - ds * dz
        dx, dy, ds, dz = newton(rc)
        alpha_p = 0.995 * _max_step(s, ds)
        alpha_d = 0.995 * _max_step(z, dz)
        x = x + alpha_p * dx
        s = s + alpha_p * ds
        y = y + alpha_d * dy
        z = z + alpha_d * dz
        if not np.all(np.isfinite(x)):
            break
    if not _feasibility_lp(a_eq, b_eq, c_in, d_in, n):
        raise Infeasible("inequality system admits no solution")
    raise MaxIterations(
        "interior point stalled on a feasible problem",
        residuals={"error": best_gap, "iterations": it + 1},
    )


def _max_step(v, dv):
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-v[neg] / dv[neg])))


def solve_qp(
    h,
    g,
    a_eq=None,
    b_eq=None,
    c_in=None,
    d_in=None,
    *,
    tol: float = 1e-9,
    warm_active: np.ndarray | None = None,
    max_iter: int = 100,
) -> QpSolution:
    """Solve a dense convex QP to round-off-level KKT residuals.

    Raises :class:`Infeasible` when the constraints admit no point, and
    :class:`MaxIterations` when the solver stalls on a feasible problem.
    """
    h = np.atleast_2d(np.asarray(h, dtype=float))
    n = h.shape[0]
    g = np.asarray(g, dtype=float).reshape(n)
    a_eq = _as_2d(a_eq, n)
    b_eq = np.asarray(b_eq, dtype=float).reshape(a_eq.shape[0]) if a_eq.size else np.zeros(0)
    c_in = _as_2d(c_in, n)
    d_in = np.asarray(d_in, dtype=float).reshape(c_in.shape[0]) if c_in.size else np.zeros(0)
    q = c_in.shape[0]

    if q == 0:
        sol = _solve_kkt(h, g, a_eq, b_eq)
        if sol is None:
            _check_equalities_consistent(a_eq, b_eq)
            raise MaxIterations("equality KKT system is numerically singular")
        x, y = sol
        return QpSolution(x=x, eq_mult=y, ineq_mult=np.zeros(0),
                          active=np.zeros(0, dtype=bool), iterations=1)

    max_swaps = max(50, 3 * (q + n))
    if warm_active is not None and warm_active.shape == (q,):
        polished = _active_set_polish(
            h, g, a_eq, b_eq, c_in, d_in, warm_active.astype(bool), tol, max_swaps
        )
        if polished is not None:
            return polished

    # cold start: empty working set often settles in a few swaps
    polished = _active_set_polish(
        h, g, a_eq, b_eq, c_in, d_in, np.zeros(q, dtype=bool), tol, max_swaps
    )
    if polished is not None:
        return polished

    _check_equalities_consistent(a_eq, b_eq)
    if not _feasibility_lp(a_eq, b_eq, c_in, d_in, n):
        raise Infeasible("inequality system admits no solution")
    x, y, z, iters = _interior_point(h, g, a_eq, b_eq, c_in, d_in, tol, max_iter)
    slack = d_in - c_in @ x
    guess = (slack < np.sqrt(tol) * (1.0 + np.abs(d_in))) & (z > slack)
    polished = _active_set_polish(h, g, a_eq, b_eq, c_in, d_in, guess, tol, max_swaps)
    if polished is not None:
        polished.iterations += iters
        return polished
    raise MaxIterations("active-set polish did not settle after interior point")


def reference_solve_qp(
    h, g, a_eq=None, b_eq=None, c_in=None, d_in=None,
    *, max_iter: int = 200_000, tol: float = 1e-10,
):
    """Slow-but-sure reference: projected gradient ascent on the dual.

    Requires a positive-definite Hessian.  The dual variables of the
    inequalities are projected onto the nonnegative orthant each step;
    acceleration and adaptive restarts keep the iteration count practical
    while leaving the method independent of the primal solver.

    Returns ``(x, objective)``.
    """
    h = np.atleast_2d(np.asarray(h, dtype=float))
    n = h.shape[0]
    g = np.asarray(g, dtype=float).reshape(n)
    a_eq = _as_2d(a_eq, n)
    b_eq = np.asarray(b_eq, dtype=float).reshape(a_eq.shape[0]) if a_eq.size else np.zeros(0)
    c_in = _as_2d(c_in, n)
    d_in = np.asarray(d_in, dtype=float).reshape(c_in.shape[0]) if c_in.size else np.zeros(0)
    p, q = a_eq.shape[0], c_in.shape[0]
    cho = scipy.linalg.cho_factor(h)
    stacked = np.vstack([a_eq, c_in]) if p + q else np.zeros((0, n))
    if stacked.size:
        gram = stacked @ scipy.linalg.cho_solve(cho, stacked.T)
        lip = float(np.linalg.eigvalsh(0.5 * (gram + gram.T)).max())
        step = 1.0 / max(lip, 1e-12)
    else:
        x = scipy.linalg.cho_solve(cho, -g)
        return x, float(0.5 * x @ h @ x + g @ x)

    def primal(y, z):
        rhs = g + (a_eq.T @ y if p else 0.0) + (c_in.T @ z if q else 0.0)
        return scipy.linalg.cho_solve(cho, -rhs)

    y = np.zeros(p)
    z = np.zeros(q)
    y_prev, z_prev = y.copy(), z.copy()
    t_prev = 1.0
    for _ in range(max_iter):
        t = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_prev * t_prev))
        beta = (t_prev - 1.0) / t
        y_m = y + beta * (y - y_prev)
        z_m = z + beta * (z - z_prev)
        x = primal(y_m, z_m)
        grad_y = a_eq @ x - b_eq if p else np.zeros(0)
        grad_z = c_in @ x - d_in if q else np.zeros(0)
        y_new = y_m + step * grad_y
        z_new = np.maximum(z_m + step * grad_z, 0.0)
        # adaptive restart when momentum opposes progress
        if (y_new - y) @ (y - y_prev) + (z_new - z) @ (z - z_prev) < 0.0:
            t = 1.0
        y_prev, z_prev = y, z
        y, z = y_new, z_new
        t_prev = t
        if p + q:
            opt = 0.0
            if p:
                opt = max(opt, float(np.abs(grad_y).max()))
            if q:
                viol = np.maximum(grad_z, 0.0)
                opt = max(opt, float(viol.max(initial=0.0)))
                opt = max(opt, float(np.abs(z * grad_z).max(initial=0.0)))
            if opt <= tol:
                break
    x = primal(y, z)
    return x, float(0.5 * x @ h @ x + g @ x)
