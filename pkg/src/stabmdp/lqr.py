"""Discounted linear-quadratic regulation by Riccati value recursion.

Solves the fixed point

    P = T + g A'PA - (U' + g A'PB) K,      K = (R + g B'PB)^-1 (U + g B'PA)

for a discount factor g in (0, 1], together with the stochastic value offset
``v0 = g/(1-g) tr(PW)``, the stationary state covariance of the closed loop,
and the quadratic stage cost of the equivalent undiscounted problem.  The
scalar benchmark (A=2, B=1, T=R=1, U=0) has closed forms used throughout the
tests and the analytic experiment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .errors import (
    DomainError,
    ExistenceViolation,
    NonConvergent,
    UndefinedOffset,
)

PSD_TOL = 1e-10


@dataclass(frozen=True)
class LqrProblem:
    """Stochastic linear system with quadratic cost.

    Dynamics ``s+ = A s + B a + w`` with ``w ~ N(0, w_cov)`` and stage cost
    ``[s; a]' [[T, U'], [U, R]] [s; a]``.  The stacked cost matrix must be
    symmetric positive semidefinite (the benchmark with T = 0 is admitted).
    """

    a_mat: np.ndarray
    b_mat: np.ndarray
    t_mat: np.ndarray
    u_mat: np.ndarray
    r_mat: np.ndarray
    w_cov: np.ndarray
    gamma: float

    def __post_init__(self):
        for name in ("a_mat", "b_mat", "t_mat", "u_mat", "r_mat", "w_cov"):
            object.__setattr__(self, name, np.atleast_2d(np.asarray(getattr(self, name), dtype=float)))
        n, m = self.b_mat.shape
        if self.a_mat.shape != (n, n):
            raise ValueError(f"A must be {(n, n)}, got {self.a_mat.shape}")
        if self.t_mat.shape != (n, n) or self.r_mat.shape != (m, m):
            raise ValueError("T and R must match the state/input dimensions")
        if self.u_mat.shape != (m, n):
            raise ValueError(f"U must be {(m, n)}, got {self.u_mat.shape}")
        if self.w_cov.shape != (n, n):
            raise ValueError(f"W must be {(n, n)}, got {self.w_cov.shape}")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")
        h = self.h_mat
        if np.abs(h - h.T).max() > 1e-12:
            raise ValueError("stacked cost matrix must be symmetric")
        if np.linalg.eigvalsh(h).min() < -PSD_TOL:
            raise ValueError("stacked cost matrix must be positive semidefinite")
        if np.linalg.eigvalsh(0.5 * (self.w_cov + self.w_cov.T)).min() < -PSD_TOL:
            raise ValueError("noise covariance must be positive semidefinite")

    @property
    def n_states(self) -> int:
        return self.b_mat.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.b_mat.shape[1]

    @property
    def h_mat(self) -> np.ndarray:
        """Stacked cost matrix [[T, U'], [U, R]]."""
        return np.block([[self.t_mat, self.u_mat.T], [self.u_mat, self.r_mat]])


@dataclass(frozen=True)
class LqrSolution:
    """Riccati solution, feedback, value offset and stationary covariance.

    ``s_inf`` is None exactly when the closed loop is not strictly stable
    (spectral radius >= 1), in which case the state covariance diverges.
    """

    p_mat: np.ndarray
    k_mat: np.ndarray
    v0: float
    s_inf: np.ndarray | None
    spectral_radius: float


def riccati_residual(prob: LqrProblem, p_mat: np.ndarray) -> float:
    """Sup-norm residual of P in the discounted Riccati equation."""
    g = prob.gamma
    a, b = prob.a_mat, prob.b_mat
    curv = prob.r_mat + g * b.T @ p_mat @ b
    k = np.linalg.solve(curv, prob.u_mat + g * b.T @ p_mat @ a)
    rhs = prob.t_mat + g * a.T @ p_mat @ a - (prob.u_mat.T + g * a.T @ p_mat @ b) @ k
    return float(np.abs(p_mat - rhs).max())


def solve_discounted_dare(
    prob: LqrProblem, tol: float = 1e-12, max_iter: int = 100_000
) -> LqrSolution:
    """Fixed point of the discounted Riccati value recursion from P0 = T.

    Raises :class:`ExistenceViolation` when ``R + g B'PB`` loses positive
    definiteness along the recursion, :class:`NonConvergent` when the value
    recursion diverges (unbounded value function), and
    :class:`UndefinedOffset` at gamma = 1 with ``tr(PW) != 0``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    g = prob.gamma
    a, b = prob.a_mat, prob.b_mat
    p = prob.t_mat.copy()
    for _ in range(max_iter):
        curv = prob.r_mat + g * b.T @ p @ b
        if np.linalg.eigvalsh(0.5 * (curv + curv.T)).min() <= 0.0:
            raise ExistenceViolation(
                "R + gamma B'PB lost positive definiteness during the recursion"
            )
        k = np.linalg.solve(curv, prob.u_mat + g * b.T @ p @ a)
        p_next = prob.t_mat + g * a.T @ p @ a - (prob.u_mat.T + g * a.T @ p @ b) @ k
        p_next = 0.5 * (p_next + p_next.T)
        if not np.all(np.isfinite(p_next)) or np.abs(p_next).max() > 1e12:
            raise NonConvergent("Riccati recursion diverged; value function unbounded")
        if np.abs(p_next - p).max() <= tol * max(1.0, np.abs(p_next).max()):
            p = p_next
            break
        p = p_next
    else:
        raise NonConvergent(
            f"Riccati recursion did not reach tol={tol}", iterations=max_iter
        )
    curv = prob.r_mat + g * b.T @ p @ b
    k = np.linalg.solve(curv, prob.u_mat + g * b.T @ p @ a)
    if g == 1.0:
        trace_pw = float(np.trace(p @ prob.w_cov))
        if abs(trace_pw) > 1e-12:
            raise UndefinedOffset("value offset has a pole: gamma = 1 with tr(PW) != 0")
        v0 = 0.0
    else:
        v0 = g / (1.0 - g) * float(np.trace(p @ prob.w_cov))
    rho = closed_loop_spectral_radius(prob, k)
    s_inf = stationary_covariance(prob, k) if rho < 1.0 else None
    return LqrSolution(p_mat=p, k_mat=k, v0=v0, s_inf=s_inf, spectral_radius=rho)


def closed_loop_spectral_radius(prob: LqrProblem, k_mat: np.ndarray) -> float:
    """Spectral radius of A - B K."""
    k_mat = np.atleast_2d(np.asarray(k_mat, dtype=float))
    return float(np.abs(np.linalg.eigvals(prob.a_mat - prob.b_mat @ k_mat)).max())


def stationary_covariance(
    prob: LqrProblem, k_mat: np.ndarray, tol: float = 1e-12, max_iter: int = 1_000_000
) -> np.ndarray | None:
    """Stationary state covariance under ``a = -K s``; None when unstable.

    Fixed-point iteration ``S <- A_K S A_K' + W`` converges to the unique
    solution of the Lyapunov equation whenever ``rho(A_K) < 1``.
    """
    if closed_loop_spectral_radius(prob, k_mat) >= 1.0:
        return None
    a_k = prob.a_mat - prob.b_mat @ np.atleast_2d(np.asarray(k_mat, dtype=float))
    s = prob.w_cov.copy()
    for _ in range(max_iter):
        s_next = a_k @ s @ a_k.T + prob.w_cov
        if np.abs(s_next - s).max() <= tol * max(1.0, np.abs(s_next).max()):
            return 0.5 * (s_next + s_next.T)
        s = s_next
    raise NonConvergent("Lyapunov fixed-point iteration stalled", iterations=max_iter)


def closed_loop_value_limit(prob: LqrProblem, sol: LqrSolution) -> float:
    """Limit of E[V*(s_k)] along the optimal closed loop.

    ``tr(P S_inf) + v0`` for a strictly stable loop; ``0`` when P = 0 (the
    limit exists trivially even if the chain diverges); ``+inf`` otherwise.
    """
    if np.abs(sol.p_mat).max() == 0.0:
        return 0.0
    if sol.spectral_radius < 1.0:
        return float(np.trace(sol.p_mat @ sol.s_inf)) + sol.v0
    return math.inf


def equivalent_undiscounted_cost(
    prob: LqrProblem, sol: LqrSolution
) -> tuple[np.ndarray, float]:
    """Quadratic stage cost of the equivalent undiscounted problem.

    Returns the stacked matrix whose blocks are the original cost blocks
    shifted by ``(gamma - 1)`` times the corresponding ``A/B'PA/B`` terms,
    plus the constant offset ``-tr(PW)``.
    """
    g, p = prob.gamma, sol.p_mat
    a, b = prob.a_mat, prob.b_mat
    h_shift = np.block(
        [
            [prob.t_mat + (g - 1.0) * a.T @ p @ a, prob.u_mat.T + (g - 1.0) * a.T @ p @ b],
            [prob.u_mat + (g - 1.0) * b.T @ p @ a, prob.r_mat + (g - 1.0) * b.T @ p @ b],
        ]
    )
    return 0.5 * (h_shift + h_shift.T), -float(np.trace(p @ prob.w_cov))


def undiscounted_equivalent_residual(
    prob: LqrProblem, sol: LqrSolution
) -> tuple[float, np.ndarray]:
    """Residual of P in the gamma = 1 Riccati equation built from the
    transformed stage cost, and the feedback that equation produces.

    Both vanish (up to round-off) whenever the closed-loop value limit is
    finite: the discounted solution and the undiscounted transformed problem
    share P and K.
    """
    h_shift, _ = equivalent_undiscounted_cost(prob, sol)
    n = prob.n_states
    t_s, u_s, r_s = h_shift[:n, :n], h_shift[n:, :n], h_shift[n:, n:]
    a, b, p = prob.a_mat, prob.b_mat, sol.p_mat
    curv = r_s + b.T @ p @ b
    k_eq = np.linalg.solve(curv, u_s + b.T @ p @ a)
    rhs = t_s + a.T @ p @ a - (u_s.T + a.T @ p @ b) @ k_eq
    return float(np.abs(p - rhs).max()), k_eq


# ---------------------------------------------------------------------------
# scalar benchmark: A=2, B=1, T=1, U=0, R=1

def scalar_benchmark_problem(gamma: float, w: float = 0.0) -> LqrProblem:
    """The scalar benchmark system at a given discount factor."""
    return LqrProblem(
        a_mat=[[2.0]], b_mat=[[1.0]], t_mat=[[1.0]], u_mat=[[0.0]],
        r_mat=[[1.0]], w_cov=[[w]], gamma=gamma,
    )


def scalar_benchmark_p(gamma: float) -> float:
    """Closed-form Riccati solution of the scalar benchmark."""
    disc = math.sqrt((1.0 - 5.0 * gamma) ** 2 + 4.0 * gamma)
    return (5.0 * gamma - 1.0 + disc) / (2.0 * gamma)


def scalar_benchmark_k(gamma: float) -> float:
    """Closed-form optimal feedback of the scalar benchmark."""
    disc = math.sqrt((1.0 - 5.0 * gamma) ** 2 + 4.0 * gamma)
    return 4.0 * gamma / (1.0 - 3.0 * gamma + disc)


def golden_section_minimize(
    f: Callable[[float], float], lo: float, hi: float, tol: float = 1e-8
) -> float:
    """Golden-section minimizer of a unimodal function on [lo, hi]."""
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = float(lo), float(hi)
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


class ScalarFeedbacks(NamedTuple):
    k_unconstrained: float
    k_mstab: float
    p_of_k: Callable[[float], float]


def scalar_example_feedbacks(gamma: float) -> ScalarFeedbacks:
    """Unconstrained and marginal-stability-constrained feedbacks.

    The scalar benchmark is stabilized only by feedbacks in (1, 3).  The
    constrained solution minimizes the closed-loop value coefficient

        P_K(K) = (K^2 + 1) / (1 - gamma (2 - K)^2)

    over the closed interval [1, 3]: the boundary value 1 for
    ``gamma <= 1/3`` and the unconstrained feedback otherwise.  The returned
    piecewise value is cross-checked against a golden-section minimization.
    """
    if not 0.0 < gamma <= 1.0:
        raise DomainError(f"gamma must be in (0, 1], got {gamma}")
    k_unc = scalar_benchmark_k(gamma)

    def p_of_k(k: float) -> float:
        denom = 1.0 - gamma * (2.0 - k) ** 2
        if denom <= 0.0:
            return math.inf
        return (k * k + 1.0) / denom

    k_mstab = 1.0 if gamma <= 1.0 / 3.0 else k_unc
    k_golden = golden_section_minimize(p_of_k, 1.0, 3.0, tol=1e-8)
    if abs(k_golden - k_mstab) > 1e-6:
        raise NonConvergent(
            f"golden-section minimizer {k_golden:.9f} disagrees with the "
            f"piecewise value {k_mstab:.9f} at gamma={gamma}"
        )
    return ScalarFeedbacks(k_unc, k_mstab, p_of_k)
