"""Linear tube-based robust MPC: noise-set fitting, constraint tightening,
robust invariant terminal sets, and the tube QP.

The error system is ``e+ = (A - B K) e + w`` with ``w`` confined to a fitted
polytope.  Constraints ``C x + D u + c_hat <= 0`` are tightened stage-wise by
the support of the error tube under the ancillary feedback ``u = u_bar - K e``,
the terminal set is the maximal robust positively invariant subset of the
fully-tightened constraints in error coordinates, and the QP pins the
measured state, so the tube has zero width at the first stage.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import EmptyTerminalSet, InstabilityError, NonConvergent
from .lqr import LqrProblem, solve_discounted_dare
from .ocp import AffineModel, MpcSolution, Ocp, solve_ocp
from .polytope import (
    Polytope,
    minkowski_sum_vertices,
    polytope_from_vertices,
    support_from_vertices,
)

STEADY_STATE_TOL = 1e-8


def _sym(mat: np.ndarray) -> np.ndarray:
    return 0.5 * (mat + mat.T)


def fit_noise_set(samples: np.ndarray, facet_normals: np.ndarray) -> np.ndarray:
    """Tightest offsets ``m`` with ``M w_i <= m`` for every sample.

    ``m_j = max_i M_j . w_i``; adding samples never shrinks the fitted set.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if samples.shape[0] == 0:
        raise ValueError("at least one residual sample is required")
    facet_normals = np.atleast_2d(np.asarray(facet_normals, dtype=float))
    return (samples @ facet_normals.T).max(axis=0)


def support_function(p: Polytope, direction) -> float:
    """Support value of a polytope in a direction (linear program)."""
    return p.support(direction)


@dataclass
class TubeMpcProblem:
    """Tube MPC data; ``p_mat`` and ``k_gain`` solve the undiscounted
    Riccati system for ``(a_mat, b_mat, stage_cost)``.
    """

    a_mat: np.ndarray
    b_mat: np.ndarray
    stage_cost: np.ndarray            # (n+m, n+m)
    x_ref: np.ndarray
    u_ref: np.ndarray
    horizon: int
    c_mat: np.ndarray                 # C x + D u + c_hat <= 0
    d_mat: np.ndarray
    c_hat: np.ndarray
    noise_set: Polytope
    p_mat: np.ndarray
    k_gain: np.ndarray
    c_vec: np.ndarray | None = None   # affine model shift
    initial_mat: np.ndarray | None = None
    initial_vec: np.ndarray | None = None
    initial_offset: float = 0.0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.a_mat = np.atleast_2d(np.asarray(self.a_mat, dtype=float))
        self.b_mat = np.atleast_2d(np.asarray(self.b_mat, dtype=float))
        n, m = self.b_mat.shape
        self.stage_cost = _sym(np.asarray(self.stage_cost, dtype=float))
        self.p_mat = _sym(np.atleast_2d(np.asarray(self.p_mat, dtype=float)))
        if self.initial_mat is not None:
            self.initial_mat = _sym(np.atleast_2d(np.asarray(self.initial_mat, dtype=float)))
        if self.c_vec is None:
            self.c_vec = np.zeros(n)
        self.c_vec = np.asarray(self.c_vec, dtype=float).reshape(n)
        self.x_ref = np.asarray(self.x_ref, dtype=float).reshape(n)
        self.u_ref = np.asarray(self.u_ref, dtype=float).reshape(m)
        resid = (self.a_mat - np.eye(n)) @ self.x_ref + self.b_mat @ self.u_ref + self.c_vec
        if np.abs(resid).max() > STEADY_STATE_TOL:
            raise ValueError(
                f"(x_ref, u_ref) is not a steady state (residual {np.abs(resid).max():.2e})"
            )
        self.c_mat = np.atleast_2d(np.asarray(self.c_mat, dtype=float))
        self.d_mat = np.atleast_2d(np.asarray(self.d_mat, dtype=float))
        self.c_hat = np.asarray(self.c_hat, dtype=float).reshape(self.c_mat.shape[0])

    @property
    def n(self) -> int:
        return self.b_mat.shape[0]

    @property
    def m(self) -> int:
        return self.b_mat.shape[1]

    @property
    def a_closed(self) -> np.ndarray:
        return self.a_mat - self.b_mat @ self.k_gain

    def with_updates(self, **kwargs) -> "TubeMpcProblem":
        new = replace(self, **kwargs)
        new._cache = {}
        return new


def riccati_terminal_pair(a_mat, b_mat, stage_cost) -> tuple[np.ndarray, np.ndarray]:
    """(P, K) of the undiscounted regulator for the given stage cost."""
    a_mat = np.atleast_2d(np.asarray(a_mat, dtype=float))
    b_mat = np.atleast_2d(np.asarray(b_mat, dtype=float))
    n = b_mat.shape[0]
    h = np.asarray(stage_cost, dtype=float)
    prob = LqrProblem(
        a_mat=a_mat, b_mat=b_mat, t_mat=h[:n, :n], u_mat=h[n:, :n],
        r_mat=h[n:, n:], w_cov=np.zeros((n, n)), gamma=1.0,
    )
    sol = solve_discounted_dare(prob)
    return sol.p_mat, sol.k_mat


def make_tube_problem(
    a_mat, b_mat, stage_cost, x_ref, u_ref, horizon,
    c_mat, d_mat, c_hat, noise_set: Polytope,
    c_vec=None, initial_mat=None, initial_vec=None, initial_offset=0.0,
) -> TubeMpcProblem:
    """Assemble a tube problem, deriving (P, K) from the stage cost."""
    p_mat, k_gain = riccati_terminal_pair(a_mat, b_mat, stage_cost)
    return TubeMpcProblem(
        a_mat=a_mat, b_mat=b_mat, stage_cost=np.asarray(stage_cost, dtype=float),
        x_ref=x_ref, u_ref=u_ref, horizon=horizon,
        c_mat=c_mat, d_mat=d_mat, c_hat=c_hat, noise_set=noise_set,
        p_mat=p_mat, k_gain=k_gain, c_vec=c_vec,
        initial_mat=initial_mat, initial_vec=initial_vec,
        initial_offset=initial_offset,
    )


def tighten_constraints(prob: TubeMpcProblem) -> tuple[np.ndarray, np.ndarray]:
    """Stage-wise tightened offsets and the infinite-horizon margin.

    ``offsets[k] = c_hat + h_k`` with
    ``h_k[r] = sum_{i<k} sup_W ((A_K^i)' rows_r)`` for the error-feedback
    rows ``rows = C - D K``; the tube is empty at stage zero.  The returned
    terminal margin is the limit ``h_inf`` (geometric tail summed to 1e-12),
    which dominates every stage and is what the terminal set uses.
    """
    a_k = prob.a_closed
    rho = float(np.abs(np.linalg.eigvals(a_k)).max())
    if rho >= 1.0:
        raise InstabilityError(f"tube feedback is not stabilizing (radius {rho:.4f})")
    rows = prob.c_mat - prob.d_mat @ prob.k_gain
    w_verts = prob.noise_set.vertices()
    n_rows = rows.shape[0]
    h = np.zeros(n_rows)
    offsets = np.zeros((prob.horizon, n_rows))
    mat_power = np.eye(prob.n)
    k = 0
    cap = max(prob.horizon + 1, 10_000)
    scale = max(1.0, float(np.abs(w_verts).max()))
    while True:
        if k < prob.horizon:
            offsets[k] = prob.c_hat + h
        step = np.array([
            support_from_vertices(w_verts, mat_power.T @ rows[r]) for r in range(n_rows)
        ])
        h = h + step
        mat_power = a_k @ mat_power
        k += 1
        if k >= prob.horizon and step.max(initial=0.0) <= 1e-12 * scale:
            break
        if k > cap:
            raise NonConvergent("error-tube tail did not vanish", iterations=k)
    return offsets, prob.c_hat + h


def _error_constraint_set(prob: TubeMpcProblem, margin: np.ndarray) -> Polytope:
    """Constraints under the terminal feedback, in error coordinates."""
    rows = prob.c_mat - prob.d_mat @ prob.k_gain
    rhs = -(margin + prob.c_mat @ prob.x_ref + prob.d_mat @ prob.u_ref)
    return Polytope(rows, rhs)


def terminal_invariant_set(prob: TubeMpcProblem, max_iter: int = 200) -> Polytope:
    """Maximal robust positively invariant set of the constrained error system.

    Backward iteration of robust preimages from the fully-tightened
    constraint set, with LP-based facet pruning after every step.  The result
    ``S`` (in error coordinates) satisfies ``A_K S (+) W  inside  S`` and sits
    inside the tightened constraints; both properties are auditable with
    :func:`invariance_violation`.  Raises :class:`EmptyTerminalSet` when the
    iteration empties.
    """
    _, terminal_margin = tighten_constraints(prob)
    return robust_invariant_set(prob, terminal_margin, max_iter=max_iter)


def robust_invariant_set(
    prob: TubeMpcProblem, margin: np.ndarray, max_iter: int = 200
) -> Polytope:
    """Maximal robust invariant set in error coordinates for a given
    constraint margin (``c_hat`` itself gives the untightened variant)."""
    w_verts = prob.noise_set.vertices()
    a_k = prob.a_closed
    current = _error_constraint_set(prob, margin).prune()
    if current.is_empty():
        raise EmptyTerminalSet("tightened constraints exclude the reference")
    for _ in range(max_iter):
        pre_f = current.f_mat @ a_k
        pre_g = current.g_vec - np.array(
            [support_from_vertices(w_verts, current.f_mat[i])
             for i in range(current.n_facets)]
        )
        needed_f, needed_g = [], []
        for i in range(pre_f.shape[0]):
            norm = np.linalg.norm(pre_f[i])
            if norm < 1e-12:
                if pre_g[i] < -1e-12:
                    raise EmptyTerminalSet("robust preimage is empty")
                continue
            try:
                sup = current.support(pre_f[i])
            except Exception:
                sup = np.inf
            if sup > pre_g[i] + 1e-10 * (1.0 + abs(pre_g[i])):
                needed_f.append(pre_f[i])
                needed_g.append(pre_g[i])
        if not needed_f:
            return current
        current = current.intersect(Polytope(np.array(needed_f), np.array(needed_g))).prune()
        if current.is_empty():
            raise EmptyTerminalSet("invariant-set iteration emptied")
    raise NonConvergent("invariant-set iteration hit the cap", iterations=max_iter)


def invariance_violation(s: Polytope, a_k, w: Polytope) -> float:
    """max over facets of sup(A_K S (+) W) - offset; <= 0 means invariant."""
    a_k = np.atleast_2d(np.asarray(a_k, dtype=float))
    w_verts = w.vertices()
    worst = -np.inf
    for i in range(s.n_facets):
        row = s.f_mat[i]
        val = s.support(a_k.T @ row) + support_from_vertices(w_verts, row) - s.g_vec[i]
        worst = max(worst, val)
    return float(worst)


def mrpi_outer_approx(a_k, w: Polytope, eps: float = 1e-3, max_terms: int = 500) -> Polytope:
    """Invariant outer approximation of the minimal robust invariant set.

    Truncated Minkowski sums of the noise set propagated through the stable
    closed loop, inflated by ``1/(1-alpha)`` where ``A_K^s W`` fits inside
    ``alpha W``.  The returned set contains the true minimal set, is within
    ``eps`` of it, and is itself robust positively invariant.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    a_k = np.atleast_2d(np.asarray(a_k, dtype=float))
    if float(np.abs(np.linalg.eigvals(a_k)).max()) >= 1.0:
        raise InstabilityError("minimal invariant set needs a stable closed loop")
    w_verts = w.vertices()
    if np.abs(w_verts).max() <= 1e-14:
        return Polytope(w.f_mat, np.zeros(w.n_facets), normalize=False)
    if np.any(w.g_vec <= 1e-14):
        raise NonConvergent("noise set must contain the origin in its interior")
    total_verts = w_verts.copy()
    power_verts = w_verts.copy()
    mat_power = a_k.copy()
    for _ in range(max_terms):
        # alpha with A_K^s W inside alpha W, via support ratios on W's facets
        alpha = max(
            support_from_vertices(w_verts, mat_power.T @ w.f_mat[j]) / w.g_vec[j]
            for j in range(w.n_facets)
        )
        radius = float(np.linalg.norm(total_verts, axis=1).max())
        if alpha < 1.0 and alpha / (1.0 - alpha) * radius <= eps:
            scaled = total_verts / (1.0 - alpha)
            if scaled.shape[1] == 1:
                return Polytope([[1.0], [-1.0]],
                                [scaled.max(), -scaled.min()])
            return polytope_from_vertices(scaled)
        power_verts = power_verts @ a_k.T
        total_verts = minkowski_sum_vertices(total_verts, power_verts)
        mat_power = a_k @ mat_power
    raise NonConvergent("contraction test failed within the term cap",
                        iterations=max_terms)


def tube_design(prob: TubeMpcProblem):
    """(stage offsets, terminal margin, terminal set, assembled OCP); cached."""
    cached = prob._cache.get("design")
    if cached is not None:
        return cached
    offsets, terminal_margin = tighten_constraints(prob)
    terminal = terminal_invariant_set(prob)
    ocp = Ocp(
        model=AffineModel(prob.a_mat, prob.b_mat, prob.c_vec),
        horizon=prob.horizon,
        stage_cost=prob.stage_cost,
        x_ref=prob.x_ref,
        u_ref=prob.u_ref,
        initial_mat=prob.initial_mat,
        initial_vec=prob.initial_vec,
        initial_offset=prob.initial_offset,
        initial_about_reference=False,
        terminal_cost=prob.p_mat,
        terminal_set=(terminal.f_mat, terminal.g_vec),
        path_mat_x=prob.c_mat,
        path_mat_u=prob.d_mat,
        path_offset=offsets,
    )
    design = (offsets, terminal_margin, terminal, ocp)
    prob._cache["design"] = design
    return design


def solve_tube_mpc(
    prob: TubeMpcProblem, s, a=None, *, warm: MpcSolution | None = None,
    certify: bool = True,
) -> MpcSolution:
    """Solve the tube QP from the measured state (optionally pinning u_0).

    The objective carries the tracking cost, the terminal cost and the
    initial-cost terms on the raw measured state.  Raises
    :class:`~stabmdp.errors.Infeasible` when the tightened program is empty
    at ``s``.
    """
    _, _, _, ocp = tube_design(prob)
    return solve_ocp(ocp, s, a, warm=warm, certify=certify)


def tube_parameter_gradient(prob: TubeMpcProblem, s, sol: MpcSolution):
    """Lagrangian gradient of the tube value with respect to the learnable
    parameters, holding the derived quantities (P, K, tightening, terminal
    set) fixed at their current values.
    """
    n, N = prob.n, prob.horizon
    s = np.asarray(s, dtype=float).reshape(n)
    states, controls = sol.states, sol.controls
    dev_x = states[:N] - prob.x_ref
    dev_u = controls - prob.u_ref
    dev = np.hstack([dev_x, dev_u])
    hxx = prob.stage_cost[:n, :n]
    hxu = prob.stage_cost[:n, n:]
    huu = prob.stage_cost[n:, n:]
    grad_xr = -2.0 * (dev_x @ hxx + dev_u @ hxu.T).sum(axis=0)
    grad_xr += -2.0 * prob.p_mat @ (states[N] - prob.x_ref)
    if sol.set_mult is not None:
        _, _, terminal, _ = tube_design(prob)
        grad_xr += -terminal.f_mat.T @ sol.set_mult
    grad_ur = -2.0 * (dev_x @ hxu + dev_u @ huu).sum(axis=0)
    return {
        "initial_mat": np.outer(s, s),
        "initial_vec": s,
        "initial_offset": 1.0,
        "stage_cost": dev.T @ dev,
        "x_ref": grad_xr,
        "u_ref": grad_ur,
    }
