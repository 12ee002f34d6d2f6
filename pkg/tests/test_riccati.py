import numpy as np
import pytest

from hjbrom.model import (
    QuadraticCost,
    SeparableControlSystem,
    StepperConfig,
    constant_control,
    constant_state_cost,
    discounted_cost,
    linear_drift,
    simulate,
)
from hjbrom.riccati import (
    AREProblem,
    ARESolution,
    RiccatiError,
    are_residual,
    lqr_gain,
    lqr_value,
    solve_are,
    spectral_abscissa,
)


def scalar_problem(discount=0.0):
    return AREProblem([[-1.0]], [[1.0]], [[1.0]], [[1.0]], discount)


def random_stable_problem(seed, n=5, m=2, discount=0.3):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, n)) - (n + 1) * np.eye(n)
    B = rng.standard_normal((n, m))
    Q = rng.standard_normal((n, n))
    Q = Q @ Q.T
    return AREProblem(A, B, Q, np.eye(m), discount)


def residual_oracle(prob, P):
    """Element-wise re-evaluation of the residual formula."""
    n = prob.n
    As = prob.A - 0.5 * prob.discount * np.eye(n)
    S = prob.B @ np.linalg.inv(prob.R) @ prob.B.T
    out = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            out[i, j] = (
                sum(As[k, i] * P[k, j] for k in range(n))
                + sum(P[i, k] * As[k, j] for k in range(n))
                - sum(P[i, k] * S[k, l] * P[l, j] for k in range(n) for l in range(n))
                + prob.Q[i, j]
            )
    return out


class TestResidual:
    def test_zero_solution_gives_q(self):
        prob = random_stable_problem(0)
        np.testing.assert_allclose(are_residual(prob, np.zeros((5, 5))), prob.Q)

    def test_scalar_analytic_root(self):
        p = -1.0 + np.sqrt(2.0)
        res = are_residual(scalar_problem(), [[p]])
        assert abs(res[0, 0]) < 1e-14

    def test_random_vs_elementwise_oracle(self):
        rng = np.random.default_rng(1)
        prob = random_stable_problem(1, n=3, m=1, discount=0.7)
        P = rng.standard_normal((3, 3))
        P = P + P.T
        np.testing.assert_allclose(are_residual(prob, P), residual_oracle(prob, P), atol=1e-14)


class TestSolve:
    def test_scalar_undiscounted(self):
        sol = solve_are(scalar_problem(0.0))
        np.testing.assert_allclose(sol.P[0, 0], -1.0 + np.sqrt(2.0), rtol=1e-12)

    def test_scalar_discounted_shift(self):
        sol = solve_are(scalar_problem(1.0))
        np.testing.assert_allclose(sol.P[0, 0], (-3.0 + np.sqrt(13.0)) / 2.0, rtol=1e-12)

    def test_random_stable_residual_bound(self):
        for seed in range(4):
            prob = random_stable_problem(seed)
            sol = solve_are(prob)
            assert np.linalg.norm(are_residual(prob, sol.P)) <= 1e-9 * np.linalg.norm(prob.Q)

    def test_unstable_stabilizable_pair(self):
        A = np.array([[0.8, 1.0], [0.0, 0.4]])
        B = np.array([[0.0], [1.0]])
        prob = AREProblem(A, B, np.eye(2), [[1.0]], 0.0)
        sol = solve_are(prob)
        K = lqr_gain(prob, sol)
        assert spectral_abscissa(A - B @ K) < 0

    def test_closed_loop_stability_of_solutions(self):
        for seed in range(3):
            prob = random_stable_problem(seed + 10, discount=0.8)
            sol = solve_are(prob)
            K = lqr_gain(prob, sol)
            assert spectral_abscissa(prob.shifted() - prob.B @ K) < 0

    def test_psd_solution(self):
        prob = random_stable_problem(7)
        sol = solve_are(prob)
        assert np.min(np.linalg.eigvalsh(sol.P)) > -1e-10

    def test_q_scaling_monotone(self):
        p1 = solve_are(scalar_problem()).P[0, 0]
        prob2 = AREProblem([[-1.0]], [[1.0]], [[2.0]], [[1.0]], 0.0)
        p2 = solve_are(prob2).P[0, 0]
        assert p2 > p1
        assert abs(are_residual(prob2, [[p2]])[0, 0]) < 1e-12

    def test_unstabilizable_rejected(self):
        # unstable mode invisible to B
        A = np.diag([1.0, -1.0])
        B = np.array([[0.0], [1.0]])
        with pytest.raises(RiccatiError):
            solve_are(AREProblem(A, B, np.eye(2), [[1.0]], 0.0))

    def test_symmetry_enforced_in_solution_type(self):
        with pytest.raises(ValueError):
            ARESolution(P=np.array([[1.0, 0.5], [0.0, 1.0]]), residual_norm=0.0, iterations=1)


class TestGainAndValue:
    def test_scalar_gain(self):
        prob = scalar_problem()
        sol = solve_are(prob)
        np.testing.assert_allclose(lqr_gain(prob, sol)[0, 0], -1.0 + np.sqrt(2.0), rtol=1e-12)

    def test_zero_input_map_gives_zero_gain(self):
        prob = AREProblem([[-1.0]], [[0.0]], [[1.0]], [[1.0]], 0.0)
        sol = solve_are(prob)
        np.testing.assert_allclose(lqr_gain(prob, sol), [[0.0]])

    def test_random_gain_formula(self):
        prob = random_stable_problem(3)
        sol = solve_are(prob)
        expected = np.linalg.inv(prob.R) @ prob.B.T @ sol.P
        np.testing.assert_allclose(lqr_gain(prob, sol), expected, atol=1e-13)

    def test_value_at_origin_and_scalar_case(self):
        sol = solve_are(scalar_problem())
        assert lqr_value(sol, np.zeros(1)) == 0.0
        np.testing.assert_allclose(lqr_value(sol, np.array([2.0])), 4.0 * (-1.0 + np.sqrt(2.0)), rtol=1e-12)

    def test_value_matches_simulated_closed_loop_cost(self):
        rng = np.random.default_rng(0)
        n, m, lam = 3, 1, 0.5
        A = rng.standard_normal((n, n)) - 2.5 * np.eye(n)
        B = rng.standard_normal((n, m))
        Q = np.eye(n)
        R = np.eye(m)
        prob = AREProblem(A, B, Q, R, lam)
        sol = solve_are(prob)
        K = lqr_gain(prob, sol)

        sys = SeparableControlSystem(
            n=n, m=m,
            drift_terms=(linear_drift(A),),
            control_terms=(constant_control(B),),
        )
        cost = QuadraticCost(
            control_weight=lambda mu: R,
            discount=lam,
            state_weight_terms=constant_state_cost(Q),
        )
        x = rng.standard_normal(n)
        traj = simulate(
            sys, x, lambda t, y: -K @ y, np.zeros(1), StepperConfig("explicit_euler", 1e-4), 30.0
        )
        J = discounted_cost(sys, cost, traj)
        assert abs(J - lqr_value(sol, x)) / abs(lqr_value(sol, x)) < 0.01
