"""Independent brute-force oracles shared by the test suite.

Everything here is deliberately slow and simple: policy enumeration by
linear solves, trajectory enumeration, finite differences, vertex maxima.
None of it shares code with the solvers under test.
"""

import itertools

import numpy as np

from stabmdp.finite_mdp import FiniteMdp


def random_mdp(rng, n_states, n_actions, gamma, mixing=0.05):
    """Random ergodic MDP: Dirichlet rows blended with a uniform kernel."""
    trans = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    trans = (1.0 - mixing) * trans + mixing / n_states
    trans /= trans.sum(axis=2, keepdims=True)
    costs = rng.uniform(0.0, 1.0, size=(n_states, n_actions))
    return FiniteMdp(transition=trans, stage_cost=costs, gamma=gamma)


def enumerate_optimal_values(mdp):
    """Optimal value by exhaustive policy enumeration, each policy evaluated
    by a dense linear solve.  Only sensible for tiny MDPs."""
    n_s, n_a = mdp.n_states, mdp.n_actions
    best = np.full(n_s, np.inf)
    best_policy = None
    idx = np.arange(n_s)
    for assignment in itertools.product(range(n_a), repeat=n_s):
        pol = np.array(assignment)
        p_pi = mdp.transition[idx, pol, :]
        l_pi = mdp.stage_cost[idx, pol]
        v = np.linalg.solve(np.eye(n_s) - mdp.gamma * p_pi, l_pi)
        if v.sum() < best.sum() - 1e-13:
            best, best_policy = v, pol
    return best, best_policy


def enumerate_trajectory_cost(mdp, policy, costs, terminal, start, n_steps):
    """Expected n-step cost by explicit enumeration of successor sequences."""
    idx = np.arange(mdp.n_states)
    p_pi = mdp.transition[idx, np.asarray(policy, dtype=int), :]
    c_pi = np.asarray(costs, float)[idx, np.asarray(policy, dtype=int)]

    total = 0.0
    stack = [(start, 1.0, 0, 0.0)]
    while stack:
        state, prob, depth, acc = stack.pop()
        if depth == n_steps:
            total += prob * (acc + terminal[state])
            continue
        acc_next = acc + c_pi[state]
        for nxt in range(mdp.n_states):
            p = p_pi[state, nxt]
            if p > 0:
                stack.append((nxt, prob * p, depth + 1, acc_next))
    return total


def central_difference(fun, x0, step=1e-5):
    """Central finite-difference gradient of a scalar function of a vector."""
    x0 = np.asarray(x0, dtype=float)
    grad = np.zeros_like(x0)
    for i in range(x0.size):
        plus = x0.copy()
        plus[i] += step
        minus = x0.copy()
        minus[i] -= step
        grad[i] = (fun(plus) - fun(minus)) / (2.0 * step)
    return grad


def support_of_vertices(verts, direction):
    return float(np.max(np.asarray(verts) @ np.asarray(direction, dtype=float)))


def random_convex_qp(rng, n, n_eq=0, n_in=0):
    """Well-conditioned random strictly convex QP with a feasible interior."""
    q_basis = np.linalg.qr(rng.standard_normal((n, n)))[0]
    eigs = rng.uniform(0.5, 5.0, size=n)
    h = (q_basis * eigs) @ q_basis.T
    g = rng.standard_normal(n)
    x0 = rng.standard_normal(n)
    a_eq = rng.standard_normal((n_eq, n)) if n_eq else None
    b_eq = a_eq @ x0 if n_eq else None
    c_in = rng.standard_normal((n_in, n)) if n_in else None
    d_in = None
    if n_in:
        slack = rng.uniform(0.0, 1.0, size=n_in)
        # leave a few constraints active at x0 so the active set is exercised
        slack[rng.random(n_in) < 0.3] = 0.0
        d_in = c_in @ x0 + slack
    return h, g, a_eq, b_eq, c_in, d_in
