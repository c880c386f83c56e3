import numpy as np
import pytest

from stabmdp.errors import DegenerateActiveSet, Infeasible
from stabmdp.lqr import (
    equivalent_undiscounted_cost,
    scalar_benchmark_problem,
    solve_discounted_dare,
)
from stabmdp.mpc import (
    MpcParameters,
    build_ocp,
    cstr_economic_cost,
    cstr_model,
    cstr_step,
    cstr_step_jacobian,
    evaluate_policy_and_value,
    evaluate_q,
    parameter_gradient,
)
from stabmdp.ocp import AffineModel, NonlinearModel, Ocp, solve_ocp, _build_qp
from oracles import central_difference


def scalar_params(gamma=0.9, horizon=12, stage=None, terminal=None):
    prob = scalar_benchmark_problem(gamma)
    sol = solve_discounted_dare(prob)
    h_shift, _ = equivalent_undiscounted_cost(prob, sol)
    return MpcParameters(
        model=AffineModel([[2.0]], [[1.0]], [0.0]),
        horizon=horizon,
        stage_cost=h_shift if stage is None else stage,
        x_ref=[0.0],
        u_ref=[0.0],
        initial_mat=[[0.0]],
        initial_vec=[0.0],
        initial_offset=0.0,
        terminal_cost=sol.p_mat if terminal is None else terminal,
    ), prob, sol


def q_star_scalar(prob, sol, s, a):
    g, p = prob.gamma, sol.p_mat[0, 0]
    blocks = np.array([
        [1.0 + g * 4.0 * p, g * 2.0 * p],
        [g * 2.0 * p, 1.0 + g * p],
    ])
    v = np.array([s, a])
    return float(v @ blocks @ v)


class TestLqrSpecialization:
    def test_q_matches_closed_form(self):
        params, prob, sol = scalar_params()
        rng = np.random.default_rng(0)
        for _ in range(10):
            s, a = rng.uniform(-2, 2, size=2)
            q_val, q_sol = evaluate_q(params, [s], [a])
            assert q_sol.status == "solved"
            assert q_val == pytest.approx(q_star_scalar(prob, sol, s, a), abs=1e-6)

    def test_policy_matches_riccati_feedback(self):
        params, prob, sol = scalar_params()
        k = sol.k_mat[0, 0]
        for s in (-1.5, -0.2, 0.7, 2.0):
            action, value, _ = evaluate_policy_and_value(params, [s])
            assert action[0] == pytest.approx(-k * s, abs=1e-6)
            assert value == pytest.approx(sol.p_mat[0, 0] * s * s, abs=1e-6)

    def test_matrix_instance_policy(self):
        from stabmdp.lqr import LqrProblem

        rng = np.random.default_rng(5)
        a = np.array([[1.1, 0.3], [-0.2, 0.9]])
        b = np.array([[0.4], [1.0]])
        t = np.diag([1.0, 0.5])
        prob = LqrProblem(a, b, t, np.zeros((1, 2)), [[0.7]], np.zeros((2, 2)), 0.8)
        sol = solve_discounted_dare(prob)
        h_shift, _ = equivalent_undiscounted_cost(prob, sol)
        params = MpcParameters(
            model=AffineModel(a, b, np.zeros(2)), horizon=15, stage_cost=h_shift,
            x_ref=np.zeros(2), u_ref=np.zeros(1), initial_mat=np.zeros((2, 2)),
            initial_vec=np.zeros(2), initial_offset=0.0, terminal_cost=sol.p_mat,
        )
        for _ in range(5):
            s = rng.uniform(-1.5, 1.5, size=2)
            action, _, _ = evaluate_policy_and_value(params, s)
            assert np.abs(action - (-sol.k_mat @ s)).max() < 1e-6

    def test_value_is_minimum_of_q_over_actions(self):
        params, _, _ = scalar_params()
        s = [1.3]
        action, value, _ = evaluate_policy_and_value(params, s)
        q_at_action, _ = evaluate_q(params, s, action)
        assert value == pytest.approx(q_at_action, abs=1e-6)
        for off in (-0.1, 0.1):
            q_off, _ = evaluate_q(params, s, [action[0] + off])
            assert q_off >= value - 1e-9


class TestConstraints:
    def test_out_of_bounds_action_is_infinite(self):
        params, _, _ = scalar_params()
        params = params.with_updates(input_mat=[[1.0], [-1.0]], input_vec=[1.0, 1.0])
        q_val, sol = evaluate_q(params, [0.5], [2.0])
        assert q_val == np.inf
        assert sol.status == "infeasible"

    def test_zero_horizon_point_constraint_contradiction(self):
        params = MpcParameters(
            model=AffineModel([[2.0]], [[1.0]], [0.0]), horizon=0,
            stage_cost=np.eye(2), x_ref=[0.0], u_ref=[0.0],
            initial_mat=[[0.0]], initial_vec=[0.0], initial_offset=0.0,
            terminal_point=True,
        )
        q_val, sol = evaluate_q(params, [1.0], [0.0])
        assert q_val == np.inf and sol.status == "infeasible"
        q_val, sol = evaluate_q(params, [0.0], [0.0])
        assert q_val == 0.0 and sol.status == "solved"

    def test_active_bound_hit_exactly(self):
        # one step, x+ = x + u, costs x^2 + u^2 + terminal (x+)^2, |u| <= 1:
        # from s = 5 the unconstrained minimizer u = -2.5 clips to the bound
        params = MpcParameters(
            model=AffineModel([[1.0]], [[1.0]], [0.0]), horizon=1,
            stage_cost=np.eye(2), x_ref=[0.0], u_ref=[0.0],
            initial_mat=[[0.0]], initial_vec=[0.0], initial_offset=0.0,
            terminal_cost=[[1.0]], input_mat=[[1.0], [-1.0]], input_vec=[1.0, 1.0],
        )
        action, _, sol = evaluate_policy_and_value(params, [5.0])
        assert action[0] == pytest.approx(-1.0, abs=1e-10)
        assert max(sol.kkt) < 1e-8

    def test_steady_state_start_stays_at_reference(self):
        params, _, _ = scalar_params()
        params = params.with_updates(x_ref=np.array([0.0]))
        action, value, _ = evaluate_policy_and_value(params, [0.0])
        assert abs(action[0]) < 1e-9
        assert abs(value) < 1e-12


class TestSolverPaths:
    def test_riccati_path_matches_dense_kkt(self):
        params, _, _ = scalar_params(horizon=8)
        ocp = build_ocp(params)
        sol_fast = solve_ocp(ocp, [1.2], [0.3])
        h, g, const, a_eq, b_eq, _, _, _ = _build_qp(ocp, [1.2], [0.3])
        n_eq = a_eq.shape[0]
        kkt = np.block([[h, a_eq.T], [a_eq, np.zeros((n_eq, n_eq))]])
        rhs = np.concatenate([-g, b_eq])
        direct = np.linalg.solve(kkt, rhs)
        dim = h.shape[0]
        obj_direct = 0.5 * direct[:dim] @ h @ direct[:dim] + g @ direct[:dim] + const
        assert sol_fast.objective == pytest.approx(obj_direct, abs=1e-10)
        flat = np.concatenate([sol_fast.states.ravel(), sol_fast.controls.ravel()])
        assert np.abs(flat - direct[:dim]).max() < 1e-8

    def test_certified_kkt_residuals_small(self):
        params, _, _ = scalar_params()
        _, sol = evaluate_q(params, [0.9], [-1.1])
        assert max(sol.kkt) < 1e-8

    def test_sqp_on_wrapped_affine_model_matches_qp(self):
        a, b = np.array([[1.0, 0.2], [0.0, 0.8]]), np.array([[0.1], [0.5]])

        def step_jac(x, u):
            return a @ x + b @ np.atleast_1d(u), a, b

        stage = np.diag([1.0, 1.0, 0.3])
        common = dict(
            horizon=6, stage_cost=stage, x_ref=np.zeros(2), u_ref=np.zeros(1),
            initial_mat=np.zeros((2, 2)), initial_vec=np.zeros(2), initial_offset=0.0,
            terminal_cost=np.eye(2), input_mat=[[1.0], [-1.0]], input_vec=[0.4, 0.4],
        )
        lin = MpcParameters(model=AffineModel(a, b, np.zeros(2)), **common)
        nonlin = MpcParameters(model=NonlinearModel(step_jac, 2, 1), **common)
        s = np.array([1.4, -0.6])
        q_lin, _ = evaluate_q(lin, s, [0.2])
        q_non, sol_non = evaluate_q(nonlin, s, [0.2])
        assert q_non == pytest.approx(q_lin, abs=1e-8)
        assert max(sol_non.kkt) < 1e-8


class TestParameterGradient:
    def test_offset_gradient_is_one(self):
        params, _, _ = scalar_params()
        grads = parameter_gradient(params, [0.7], [-0.4], components=("initial_offset",))
        assert grads["initial_offset"] == 1.0

    def test_initial_matrix_gradient_outer_product(self):
        params, _, _ = scalar_params()
        s = 1.7
        grads = parameter_gradient(params, [s], [-0.4], components=("initial_mat",))
        assert grads["initial_mat"][0, 0] == pytest.approx(s * s)

    def test_all_components_match_central_differences(self):
        rng = np.random.default_rng(12)
        failures = []
        for trial in range(50):
            n = int(rng.integers(1, 3))
            m = 1
            a = rng.standard_normal((n, n)) * 0.8
            b = rng.standard_normal((n, m))
            c = rng.standard_normal(n) * 0.1
            basis = np.linalg.qr(rng.standard_normal((n + m, n + m)))[0]
            stage = (basis * rng.uniform(0.4, 2.0, n + m)) @ basis.T
            p_basis = np.linalg.qr(rng.standard_normal((n, n)))[0]
            terminal = (p_basis * rng.uniform(0.4, 2.0, n)) @ p_basis.T
            constrained = trial % 5 == 0
            params = MpcParameters(
                model=AffineModel(a, b, c),
                horizon=int(rng.integers(2, 6)),
                stage_cost=stage,
                x_ref=rng.standard_normal(n) * 0.3,
                u_ref=rng.standard_normal(m) * 0.3,
                initial_mat=np.outer(*(2 * [rng.standard_normal(n)])) + 0.5 * np.eye(n),
                initial_vec=rng.standard_normal(n),
                initial_offset=float(rng.standard_normal()),
                terminal_cost=terminal,
                input_mat=np.vstack([np.eye(m), -np.eye(m)]) if constrained else None,
                input_vec=np.full(2 * m, 0.3) if constrained else None,
            )
            s = rng.standard_normal(n)
            act = rng.uniform(-0.25, 0.25, size=m) if constrained else rng.standard_normal(m)
            try:
                grads = parameter_gradient(params, s, act)
            except (DegenerateActiveSet, Infeasible):
                continue
            for comp, grad in grads.items():
                fd = _fd_component(params, s, act, comp)
                grad = np.atleast_1d(np.asarray(grad, dtype=float)).ravel()
                err = np.abs(grad - fd).max() / max(1.0, np.abs(fd).max())
                if err > 1e-4:
                    failures.append((trial, comp, err))
        assert not failures, failures

    def test_degenerate_active_set_detected(self):
        # place the optimal action exactly on the bound with zero multiplier:
        # min u^2 with bound u <= 0 from the reference state
        params = MpcParameters(
            model=AffineModel([[0.0]], [[1.0]], [0.0]), horizon=1,
            stage_cost=np.diag([0.0, 1.0]), x_ref=[0.0], u_ref=[0.0],
            initial_mat=[[0.0]], initial_vec=[0.0], initial_offset=0.0,
            terminal_cost=[[0.0]], input_mat=[[1.0]], input_vec=[0.0],
        )
        with pytest.raises(DegenerateActiveSet):
            parameter_gradient(params, [0.0], [0.0])


def _fd_component(params, s, act, comp, step=1e-5):
    def q_of(p):
        val, _ = evaluate_q(p, s, act)
        return val

    if comp == "initial_offset":
        return central_difference(
            lambda v: q_of(params.with_updates(initial_offset=float(v[0]))),
            np.array([params.initial_offset]), step)
    if comp == "model_shift":
        base = params.model.c

        def fun(v):
            model = AffineModel(params.model.a, params.model.b, v)
            return q_of(params.with_updates(model=model))

        return central_difference(fun, base, step)
    base = np.atleast_1d(np.asarray(getattr(params, comp), dtype=float))
    shape = base.shape

    def fun(v):
        return q_of(params.with_updates(**{comp: v.reshape(shape)}))

    return central_difference(fun, base.ravel(), step)


class TestCstr:
    def test_zero_flow_closed_form(self):
        state = np.array([0.8, 0.1])
        nxt = cstr_step(state, 0.0)
        assert nxt[0] == pytest.approx(0.8 * np.exp(-0.4), abs=1e-8)
        assert nxt[1] == pytest.approx(0.8 + 0.1 - nxt[0], abs=1e-8)

    def test_economic_steady_state_is_fixed_point(self):
        nxt = cstr_step(np.array([0.5, 0.5]), 4.0)
        assert np.abs(nxt - 0.5).max() < 1e-8

    def test_substep_refinement_converges(self):
        # near the operating point the 10-substep integration is already
        # converged to below 1e-9 per sample interval
        state = np.array([0.505, 0.495])
        coarse = cstr_step(state, 4.0, substeps=10)
        fine = cstr_step(state, 4.0, substeps=20)
        assert np.abs(coarse - fine).max() < 1e-9
        # fourth-order convergence: each substep doubling gains ~2^4
        state = np.array([0.9, 0.2])
        d1 = np.abs(cstr_step(state, 7.0, 10) - cstr_step(state, 7.0, 20)).max()
        d2 = np.abs(cstr_step(state, 7.0, 20) - cstr_step(state, 7.0, 40)).max()
        assert d2 < d1 / 12.0

    def test_jacobians_match_finite_differences(self):
        state = np.array([0.7, 0.3])
        q = 5.0
        _, jac_x, jac_u = cstr_step_jacobian(state, q)
        fd_x = np.column_stack([
            (cstr_step(state + 1e-6 * e, q) - cstr_step(state - 1e-6 * e, q)) / 2e-6
            for e in np.eye(2)
        ])
        fd_u = (cstr_step(state, q + 1e-6) - cstr_step(state, q - 1e-6)) / 2e-6
        assert np.abs(jac_x - fd_x).max() < 1e-8
        assert np.abs(jac_u.ravel() - fd_u).max() < 1e-8

    def test_economic_cost(self):
        assert cstr_economic_cost([0.5, 0.5], 4.0) == pytest.approx(2 * 4 * 0.5 - 1.5 * 4)

    def test_mpc_tracks_steady_state(self):
        params = MpcParameters(
            model=cstr_model(), horizon=20,
            stage_cost=np.diag([5.0, 5.0, 0.1]),
            x_ref=[0.5, 0.5], u_ref=[4.0],
            initial_mat=np.zeros((2, 2)), initial_vec=np.zeros(2), initial_offset=0.0,
            terminal_point=True,
            input_mat=[[1.0], [-1.0]], input_vec=[20.0, 0.0],
        )
        action, value, sol = evaluate_policy_and_value(params, [1.0, 0.0])
        assert sol.status == "solved"
        assert max(sol.kkt) < 1e-8
        assert np.abs(sol.states[-1] - [0.5, 0.5]).max() < 1e-8
        assert 0.0 <= action[0] <= 20.0
        # closed loop under the mpc policy settles at the steady state
        state = np.array([1.0, 0.0])
        warm = None
        for _ in range(25):
            act, _, warm = evaluate_policy_and_value(params, state, warm=warm)
            state = cstr_step(state, act[0])
        assert np.abs(state - 0.5).max() < 1e-3
