import math

import numpy as np
import pytest

from stabmdp.errors import DomainError, UndefinedOffset
from stabmdp.lqr import (
    LqrProblem,
    closed_loop_spectral_radius,
    closed_loop_value_limit,
    equivalent_undiscounted_cost,
    golden_section_minimize,
    riccati_residual,
    scalar_benchmark_k,
    scalar_benchmark_p,
    scalar_benchmark_problem,
    scalar_example_feedbacks,
    solve_discounted_dare,
    stationary_covariance,
    undiscounted_equivalent_residual,
)

GOLDEN = (1.0 + math.sqrt(5.0)) / 2.0


class TestDare:
    def test_scalar_benchmark_at_gamma_one(self):
        sol = solve_discounted_dare(scalar_benchmark_problem(1.0))
        assert sol.p_mat[0, 0] == pytest.approx(2.0 + math.sqrt(5.0), abs=1e-10)
        assert sol.k_mat[0, 0] == pytest.approx(GOLDEN, abs=1e-10)

    def test_scalar_benchmark_at_one_third(self):
        sol = solve_discounted_dare(scalar_benchmark_problem(1.0 / 3.0))
        assert sol.k_mat[0, 0] == pytest.approx(1.0, abs=1e-10)

    def test_zero_state_cost_gives_zero_solution(self):
        for gamma in (0.2, 0.5, 1.0):
            prob = LqrProblem([[2.0]], [[1.0]], [[0.0]], [[0.0]], [[1.0]], [[0.0]], gamma)
            sol = solve_discounted_dare(prob)
            assert sol.p_mat[0, 0] == 0.0
            assert sol.k_mat[0, 0] == 0.0
            assert sol.spectral_radius == pytest.approx(2.0)
            assert closed_loop_value_limit(prob, sol) == 0.0

    def test_residual_small_on_scalar_grid(self):
        for gamma in np.linspace(0.02, 1.0, 50):
            prob = scalar_benchmark_problem(float(gamma))
            sol = solve_discounted_dare(prob)
            assert riccati_residual(prob, sol.p_mat) <= 1e-10
            assert sol.p_mat[0, 0] == pytest.approx(scalar_benchmark_p(gamma), abs=1e-8)
            assert sol.k_mat[0, 0] == pytest.approx(scalar_benchmark_k(gamma), abs=1e-8)

    def test_matrix_instance_against_scipy(self):
        import scipy.linalg

        rng = np.random.default_rng(2)
        for _ in range(20):
            n, m = int(rng.integers(2, 5)), int(rng.integers(1, 3))
            a = rng.standard_normal((n, n)) * 0.9
            b = rng.standard_normal((n, m))
            q_basis = np.linalg.qr(rng.standard_normal((n, n)))[0]
            t = (q_basis * rng.uniform(0.5, 2.0, n)) @ q_basis.T
            r = np.eye(m) * rng.uniform(0.5, 2.0)
            gamma = float(rng.uniform(0.4, 1.0))
            prob = LqrProblem(a, b, t, np.zeros((m, n)), r, np.zeros((n, n)), gamma)
            sol = solve_discounted_dare(prob)
            # discounted equation == undiscounted one for sqrt(gamma)-scaled A, B
            p_ref = scipy.linalg.solve_discrete_are(
                np.sqrt(gamma) * a, np.sqrt(gamma) * b, t, r
            )
            assert np.abs(sol.p_mat - p_ref).max() < 1e-7 * max(1.0, np.abs(p_ref).max())

    def test_stochastic_offset(self):
        prob = scalar_benchmark_problem(0.5, w=1.0)
        sol = solve_discounted_dare(prob)
        assert sol.v0 == pytest.approx(sol.p_mat[0, 0], abs=1e-9)  # g/(1-g) = 1

    def test_offset_pole_at_gamma_one(self):
        with pytest.raises(UndefinedOffset):
            solve_discounted_dare(scalar_benchmark_problem(1.0, w=1.0))

    def test_feedback_invariant_to_noise_bitwise(self):
        sol0 = solve_discounted_dare(scalar_benchmark_problem(0.7, w=0.0))
        sol1 = solve_discounted_dare(scalar_benchmark_problem(0.7, w=2.5))
        assert np.array_equal(sol0.k_mat, sol1.k_mat)
        assert np.array_equal(sol0.p_mat, sol1.p_mat)
        assert sol0.v0 != sol1.v0


class TestSpectralRadius:
    def test_zero_closed_loop(self):
        prob = scalar_benchmark_problem(0.9)
        assert closed_loop_spectral_radius(prob, [[2.0]]) == 0.0

    def test_marginal_boundary(self):
        prob = scalar_benchmark_problem(0.9)
        assert closed_loop_spectral_radius(prob, [[1.0]]) == pytest.approx(1.0)

    def test_rotation_scaling_eigenvalues(self):
        r, theta = 0.8, 0.7
        rot = r * np.array([[np.cos(theta), -np.sin(theta)],
                            [np.sin(theta), np.cos(theta)]])
        prob = LqrProblem(rot, np.zeros((2, 1)), np.eye(2), np.zeros((1, 2)),
                          [[1.0]], np.zeros((2, 2)), 0.9)
        assert closed_loop_spectral_radius(prob, np.zeros((1, 2))) == pytest.approx(r, abs=1e-12)

    def test_stability_switch_at_one_third(self):
        for gamma in np.linspace(0.05, 1.0, 50):
            prob = scalar_benchmark_problem(float(gamma))
            sol = solve_discounted_dare(prob)
            if gamma > 1.0 / 3.0 + 1e-9:
                assert sol.spectral_radius < 1.0
            elif gamma < 1.0 / 3.0 - 1e-9:
                assert sol.spectral_radius > 1.0


class TestStationaryCovariance:
    def test_noiseless_stable_is_zero(self):
        prob = scalar_benchmark_problem(0.9, w=0.0)
        s_inf = stationary_covariance(prob, [[1.5]])
        assert np.abs(s_inf).max() == 0.0

    def test_scalar_hand_solve(self):
        prob = LqrProblem([[0.5]], [[0.0000001]], [[1.0]], [[0.0]], [[1.0]], [[1.0]], 0.9)
        s_inf = stationary_covariance(prob, [[0.0]])
        assert s_inf[0, 0] == pytest.approx(4.0 / 3.0, abs=1e-10)

    def test_unstable_gives_sentinel(self):
        prob = scalar_benchmark_problem(0.9, w=1.0)
        assert stationary_covariance(prob, [[0.5]]) is None


class TestValueLimit:
    def test_noiseless_stable_limit_zero(self):
        prob = scalar_benchmark_problem(0.9, w=0.0)
        sol = solve_discounted_dare(prob)
        assert closed_loop_value_limit(prob, sol) == pytest.approx(0.0, abs=1e-12)

    def test_scalar_stochastic_hand_value(self):
        # A_K = 0.5, W = 1, P = 2, gamma = 0.5: tr(P S_inf) + v0 = 8/3 + 2 = 14/3
        prob = LqrProblem([[0.5]], [[1e-9]], [[1.0]], [[0.0]], [[1.0]], [[1.0]], 0.5)
        s_inf = stationary_covariance(prob, [[0.0]])
        p = np.array([[2.0]])
        v0 = 0.5 / 0.5 * float(np.trace(p * 1.0))
        value = float(np.trace(p @ s_inf)) + v0
        assert value == pytest.approx(14.0 / 3.0, abs=1e-9)

    def test_unstable_with_nonzero_p_is_infinite(self):
        prob = scalar_benchmark_problem(0.2)
        sol = solve_discounted_dare(prob)
        assert sol.spectral_radius > 1.0
        assert closed_loop_value_limit(prob, sol) == np.inf


class TestEquivalentCost:
    def test_gamma_one_recovers_original(self):
        prob = scalar_benchmark_problem(1.0)
        sol = solve_discounted_dare(prob)
        h_shift, offset = equivalent_undiscounted_cost(prob, sol)
        assert np.abs(h_shift - prob.h_mat).max() < 1e-12
        assert offset == 0.0

    def test_zero_noise_offset(self):
        prob = scalar_benchmark_problem(0.8)
        sol = solve_discounted_dare(prob)
        _, offset = equivalent_undiscounted_cost(prob, sol)
        assert offset == 0.0

    def test_matches_direct_definition_of_shifted_cost(self):
        prob = scalar_benchmark_problem(0.9)
        sol = solve_discounted_dare(prob)
        h_shift, offset = equivalent_undiscounted_cost(prob, sol)
        p = sol.p_mat[0, 0]
        rng = np.random.default_rng(4)
        for _ in range(20):
            s, a = rng.standard_normal(2)
            lhs = np.array([s, a]) @ h_shift @ np.array([s, a]) + offset
            stage = s * s + a * a
            successor = 2.0 * s + a
            rhs = stage + (0.9 - 1.0) * p * successor * successor
            assert lhs == pytest.approx(rhs, abs=1e-10)

    def test_discounted_solution_solves_transformed_undiscounted_equation(self):
        for gamma in np.linspace(0.35, 1.0, 20):
            prob = scalar_benchmark_problem(float(gamma))
            sol = solve_discounted_dare(prob)
            residual, k_eq = undiscounted_equivalent_residual(prob, sol)
            assert residual <= 1e-10 * max(1.0, np.abs(sol.p_mat).max())
            assert np.abs(k_eq - sol.k_mat).max() < 1e-9


class TestScalarFeedbacks:
    def test_constrained_feedback_below_one_third(self):
        out = scalar_example_feedbacks(0.2)
        assert out.k_mstab == 1.0
        assert out.k_unconstrained < 1.0

    def test_boundary_continuity(self):
        out = scalar_example_feedbacks(1.0 / 3.0)
        assert out.k_unconstrained == pytest.approx(1.0, abs=1e-12)
        assert out.k_mstab == 1.0

    def test_gamma_one_golden_ratio(self):
        out = scalar_example_feedbacks(1.0)
        assert out.k_mstab == pytest.approx(GOLDEN, abs=1e-10)
        assert out.k_unconstrained == pytest.approx(GOLDEN, abs=1e-10)

    def test_golden_section_matches_piecewise_on_grid(self):
        for gamma in np.linspace(0.02, 1.0, 50):
            out = scalar_example_feedbacks(float(gamma))
            k_gs = golden_section_minimize(out.p_of_k, 1.0, 3.0, tol=1e-9)
            assert abs(k_gs - out.k_mstab) < 1e-6

    def test_domain_guard(self):
        with pytest.raises(DomainError):
            scalar_example_feedbacks(0.0)
        with pytest.raises(DomainError):
            scalar_example_feedbacks(1.2)

    def test_value_coefficient_table(self):
        out = scalar_example_feedbacks(0.5)
        # closed loop 2-K: P_K = (K^2+1)/(1 - 0.5 (2-K)^2) at K=2 is 5
        assert out.p_of_k(2.0) == pytest.approx(5.0)
        assert out.p_of_k(1.0) == pytest.approx(4.0)  # 2 / (1 - 0.5)


class TestValidation:
    def test_indefinite_cost_rejected(self):
        with pytest.raises(ValueError):
            LqrProblem([[1.0]], [[1.0]], [[-1.0]], [[0.0]], [[1.0]], [[0.0]], 0.9)

    def test_semidefinite_cost_accepted(self):
        LqrProblem([[2.0]], [[1.0]], [[0.0]], [[0.0]], [[1.0]], [[0.0]], 0.9)

    def test_gamma_zero_rejected(self):
        with pytest.raises(ValueError):
            scalar_benchmark_problem(0.0)
