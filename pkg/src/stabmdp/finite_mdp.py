"""Tabular Markov decision processes and exact dynamic programming.

The data model is dense: a transition tensor ``P[s, a, s']``, a stage-cost
matrix ``L[s, a]`` whose entries are finite or ``+inf`` (the indicator value
of a forbidden pair), and a discount factor in ``(0, 1]``.  Costs are
minimised.  Probability-zero successors never propagate infinities.

All solvers are pure functions of their inputs and are safe to call
concurrently on shared read-only MDP data.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import (
    LimitDoesNotExist,
    NonConvergent,
    NonUnichain,
    SingularSystem,
)

PROB_TOL = 1e-12


@dataclass(frozen=True)
class FiniteMdp:
    """Finite MDP: transition kernel, stage cost with +inf sentinels, discount.

    transition : (S, A, S) array, each row a probability distribution
    stage_cost : (S, A) array, entries finite or ``+inf`` (never NaN)
    gamma      : discount factor in (0, 1]
    """

    transition: np.ndarray
    stage_cost: np.ndarray
    gamma: float

    def __post_init__(self):
        transition = np.ascontiguousarray(self.transition, dtype=float)
        stage_cost = np.ascontiguousarray(self.stage_cost, dtype=float)
        object.__setattr__(self, "transition", transition)
        object.__setattr__(self, "stage_cost", stage_cost)
        if transition.ndim != 3 or transition.shape[0] != transition.shape[2]:
            raise ValueError(f"transition must be (S, A, S), got {transition.shape}")
        n_s, n_a, _ = transition.shape
        if stage_cost.shape != (n_s, n_a):
            raise ValueError(
                f"stage_cost must be {(n_s, n_a)}, got {stage_cost.shape}"
            )
        if np.any(transition < -PROB_TOL):
            raise ValueError("transition probabilities must be nonnegative")
        row_err = np.abs(transition.sum(axis=2) - 1.0).max()
        if row_err > 1e-12:
            raise ValueError(f"transition rows must sum to 1 (error {row_err:.3e})")
        if np.any(np.isnan(stage_cost)) or np.any(np.isneginf(stage_cost)):
            raise ValueError("stage costs must be finite or +inf, never NaN/-inf")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]


class DpSolution(NamedTuple):
    values: np.ndarray        # (S,)
    action_values: np.ndarray  # (S, A)
    policy: np.ndarray        # (S,) int, greedy with lowest-index tie break


def expected_values(p: np.ndarray, v: np.ndarray) -> np.ndarray:
    """E[v(s')] under each probability row of ``p``.

    Rows of ``p`` index arbitrary leading dimensions; the final axis is the
    successor state.  Infinite entries of ``v`` contribute +inf exactly when
    they carry positive probability.
    """
    v = np.asarray(v, dtype=float)
    finite = np.isfinite(v)
    if finite.all():
        return p @ v
    out = p[..., finite] @ v[finite]
    inf_mass = p[..., ~finite].sum(axis=-1)
    return np.where(inf_mass > PROB_TOL, np.inf, out)


def action_values(mdp: FiniteMdp, v: np.ndarray) -> np.ndarray:
    """One-step lookahead Q(s, a) = L(s, a) + gamma * E[v(s')]."""
    return mdp.stage_cost + mdp.gamma * expected_values(mdp.transition, v)


def _sup_diff(a: np.ndarray, b: np.ndarray) -> float:
    """Sup-norm difference treating matching +inf entries as equal."""
    both_inf = np.isposinf(a) & np.isposinf(b)
    with np.errstate(invalid="ignore"):
        d = np.abs(a - b)
    d = np.where(both_inf, 0.0, d)
    if np.any(np.isnan(d)):
        return np.inf
    return float(d.max()) if d.size else 0.0


def value_iteration(
    mdp: FiniteMdp, tol: float = 1e-10, max_iter: int = 200_000
) -> DpSolution:
    """Optimal value function, action values and greedy policy.

    Iterates the Bellman operator until the sup-norm residual of the returned
    value vector is below ``tol``.  Greedy ties break toward the lowest action
    index.  Raises :class:`NonConvergent` at the iteration cap, which for
    gamma = 1 signals that no zero-cost absorbing state is reachable.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    v = np.zeros(mdp.n_states)
    for it in range(max_iter):
        q = action_values(mdp, v)
        v_next = q.min(axis=1)
        if _sup_diff(v_next, v) <= tol:
            # residual of v_next is at most gamma * tol <= tol
            return DpSolution(v_next, q, q.argmin(axis=1))
        v = v_next
    raise NonConvergent(
        f"value iteration did not reach tol={tol} in {max_iter} iterations",
        iterations=max_iter,
        residual=_sup_diff(v_next, v),
    )


def policy_transition(mdp: FiniteMdp, policy: np.ndarray) -> np.ndarray:
    """Closed-loop transition matrix P_pi[s, s']."""
    idx = np.arange(mdp.n_states)
    return mdp.transition[idx, np.asarray(policy, dtype=int), :]


def policy_costs(mdp_or_costs, policy: np.ndarray) -> np.ndarray:
    """Per-state cost column selected by a deterministic policy."""
    costs = (
        mdp_or_costs.stage_cost
        if isinstance(mdp_or_costs, FiniteMdp)
        else np.asarray(mdp_or_costs, dtype=float)
    )
    idx = np.arange(costs.shape[0])
    return costs[idx, np.asarray(policy, dtype=int)]


def policy_evaluation(
    mdp: FiniteMdp, policy: np.ndarray, tol: float = 1e-10
) -> np.ndarray:
    """Value of a deterministic policy via the linear fixed point.

    Solves ``v = L_pi + gamma * P_pi v`` directly.  States from which an
    infinite-cost pair is reachable with positive probability get ``+inf``.
    Raises :class:`SingularSystem` when ``I - gamma P_pi`` is numerically
    singular (possible only at gamma = 1).
    """
    p_pi = policy_transition(mdp, policy)
    l_pi = policy_costs(mdp, policy)
    reach_inf = ~np.isfinite(l_pi)
    for _ in range(mdp.n_states):
        grown = reach_inf | (p_pi[:, reach_inf].sum(axis=1) > PROB_TOL)
        if np.array_equal(grown, reach_inf):
            break
        reach_inf = grown
    v = np.full(mdp.n_states, np.inf)
    keep = ~reach_inf
    if keep.any():
        mat = np.eye(int(keep.sum())) - mdp.gamma * p_pi[np.ix_(keep, keep)]
        rhs = l_pi[keep]
        try:
            sol = np.linalg.solve(mat, rhs)
        except np.linalg.LinAlgError as exc:
            raise SingularSystem(f"policy-evaluation system singular: {exc}") from exc
        residual = np.abs(mat @ sol - rhs).max()
        if not np.isfinite(residual) or residual > tol * max(1.0, np.abs(rhs).max()):
            raise SingularSystem(
                f"policy-evaluation residual {residual:.3e} exceeds {tol:.1e}"
            )
        v[keep] = sol
    return v


def modified_stage_cost(mdp: FiniteMdp, v_star: np.ndarray) -> np.ndarray:
    """Stage cost shifted by (gamma - 1) times the expected optimal next value.

    This is the bridge from the discounted problem to an undiscounted one:
    along optimal actions the shifted cost telescopes to
    ``v_star(s) - E[v_star(s')]``.  +inf entries of the stage cost, and +inf
    successor values met with positive probability, map to +inf.
    """
    if mdp.gamma == 1.0:
        return mdp.stage_cost.copy()
    ev = expected_values(mdp.transition, v_star)
    inf_mask = np.isposinf(ev) | np.isposinf(mdp.stage_cost)
    out = mdp.stage_cost + (mdp.gamma - 1.0) * np.where(inf_mask, 0.0, ev)
    return np.where(inf_mask, np.inf, out)


def n_step_undiscounted_value(
    mdp: FiniteMdp,
    costs: np.ndarray,
    terminal: np.ndarray,
    policy: np.ndarray,
    n: int,
) -> np.ndarray:
    """Exact n-step undiscounted cost of a policy plus a terminal value.

    Computed by n backward recursions ``v <- c_pi + P_pi v`` starting from
    the terminal value table; ``n = 0`` returns the terminal table unchanged.
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    p_pi = policy_transition(mdp, policy)
    c_pi = policy_costs(np.asarray(costs, dtype=float), policy)
    v = np.asarray(terminal, dtype=float).copy()
    for _ in range(n):
        v = c_pi + expected_values(p_pi, v)
    return v


def stationary_distribution(
    p_pi: np.ndarray, tol: float = 1e-12, max_iter: int = 1_000_000
) -> np.ndarray:
    """Unique stationary distribution of a unichain transition matrix.

    Power iteration runs on the half-lazy kernel ``(P + I) / 2`` so that
    periodic unichains still converge; uniqueness is guarded separately by
    the multiplicity of the unit eigenvalue.  Raises :class:`NonUnichain`
    when the stationary distribution is not unique.
    """
    p_pi = np.asarray(p_pi, dtype=float)
    n = p_pi.shape[0]
    eigvals = np.linalg.eigvals(p_pi)
    if int(np.sum(np.abs(eigvals - 1.0) < 1e-8)) != 1:
        raise NonUnichain("unit eigenvalue of P_pi is not simple")
    lazy = 0.5 * (p_pi + np.eye(n))
    mu = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        mu_next = mu @ lazy
        if np.abs(mu_next - mu).sum() <= tol:
            mu_next = np.maximum(mu_next, 0.0)
            return mu_next / mu_next.sum()
        mu = mu_next
    raise NonUnichain("stationary-distribution iteration did not converge")


def _masked_dot(mu: np.ndarray, c: np.ndarray) -> float:
    """mu . c where zero-probability entries never multiply infinities."""
    active = mu > PROB_TOL
    if np.any(active & ~np.isfinite(c)):
        return np.inf
    return float(mu[active] @ c[active])


def gain(mdp: FiniteMdp, policy: np.ndarray, costs: np.ndarray) -> float:
    """Long-run average cost of a policy under an arbitrary cost table.

    Equals ``sum_s mu_pi(s) costs[s, pi(s)]`` with ``mu_pi`` the unique
    stationary distribution; :class:`NonUnichain` propagates when that
    distribution is not unique.
    """
    mu = stationary_distribution(policy_transition(mdp, policy))
    return _masked_dot(mu, policy_costs(np.asarray(costs, dtype=float), policy))


def v_infinity(
    mdp: FiniteMdp,
    policy: np.ndarray,
    v_star: np.ndarray,
    tol: float = 1e-12,
    max_iter: int = 200_000,
) -> float:
    """Limit of the expected optimal value along the closed-loop chain.

    Returns ``sum_s mu_pi(s) v_star(s)`` when the expected-value iterates
    settle, ``+inf`` when ``v_star`` is unbounded where the chain lives, and
    raises :class:`LimitDoesNotExist` when the iterates oscillate (periodic
    chains whose period-averaged values differ).
    """
    v_star = np.asarray(v_star, dtype=float)
    p_pi = policy_transition(mdp, policy)
    mu = stationary_distribution(p_pi)
    support = mu > 1e-12
    if np.any(support & ~np.isfinite(v_star)):
        return np.inf
    finite = np.isfinite(v_star)
    if not finite.all():
        # a finite-valued state feeding an infinite-value state keeps the
        # expectation at +inf forever
        if np.any(p_pi[np.ix_(finite, ~finite)].sum(axis=1) > PROB_TOL):
            return np.inf
    idx = np.where(finite)[0]
    p_sub = p_pi[np.ix_(idx, idx)]
    w = v_star[idx].copy()
    scale = max(1.0, float(np.abs(w).max()) if w.size else 1.0)
    window: list[float] = []
    for it in range(max_iter):
        w_next = p_sub @ w
        inc = float(np.abs(w_next - w).max())
        w = w_next
        if inc <= tol * scale:
            return _masked_dot(mu, v_star)
        window.append(inc)
        if len(window) > 64:
            window.pop(0)
            lo, hi = min(window), max(window)
            stalled = it > 256 and hi > 1e-10 * scale and (hi - lo) < 1e-3 * hi
            if stalled:
                raise LimitDoesNotExist(
                    "expected values oscillate along the closed-loop chain"
                )
    raise NonConvergent(
        "expected-value iteration did not settle", iterations=max_iter
    )


# ---------------------------------------------------------------------------
# text format: header line, dense cost rows, one transition matrix per action

def mdp_from_text(text: str) -> FiniteMdp:
    """Parse the plain-text MDP format.

    Grammar (whitespace separated, ``#`` starts a comment running to the end
    of the line)::

        n_states n_actions gamma
        <n_states rows of n_actions cost entries>     # "inf"/"+inf" allowed
        <n_states x n_states transition matrix for action 0>
        ...
        <n_states x n_states transition matrix for action A-1>
    """
    tokens: list[str] = []
    for line in text.splitlines():
        body = line.split("#", 1)[0]
        tokens.extend(body.split())
    if len(tokens) < 3:
        raise ValueError("MDP text must start with 'n_states n_actions gamma'")
    try:
        n_s, n_a, gamma = int(tokens[0]), int(tokens[1]), float(tokens[2])
    except ValueError as exc:
        raise ValueError(f"malformed MDP header: {exc}") from exc
    expected = 3 + n_s * n_a + n_a * n_s * n_s
    if len(tokens) != expected:
        raise ValueError(
            f"MDP text holds {len(tokens)} tokens, expected {expected} "
            f"for {n_s} states and {n_a} actions"
        )
    values = np.array([float(tok) for tok in tokens[3:]])
    costs = values[: n_s * n_a].reshape(n_s, n_a)
    trans = values[n_s * n_a :].reshape(n_a, n_s, n_s).transpose(1, 0, 2)
    return FiniteMdp(transition=np.ascontiguousarray(trans), stage_cost=costs, gamma=gamma)


def mdp_to_text(mdp: FiniteMdp) -> str:
    """Serialize an MDP in the format accepted by :func:`mdp_from_text`."""
    lines = [f"{mdp.n_states} {mdp.n_actions} {mdp.gamma!r}"]
    lines.append("# stage costs, one row per state")
    for row in mdp.stage_cost:
        lines.append(" ".join("+inf" if np.isposinf(x) else repr(float(x)) for x in row))
    for a in range(mdp.n_actions):
        lines.append(f"# transition matrix, action {a}")
        for row in mdp.transition[:, a, :]:
            lines.append(" ".join(repr(float(x)) for x in row))
    return "\n".join(lines) + "\n"


def load_mdp(path) -> FiniteMdp:
    """Read an MDP from a text file."""
    with open(path, "r", encoding="utf-8") as handle:
        return mdp_from_text(handle.read())
