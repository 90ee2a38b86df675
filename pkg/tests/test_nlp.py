"""SQP solver: analytic minimizers, constraint handling, hinge penalties."""

import numpy as np
import pytest

from ofmpc.nlp import HingeTerm, NlpOptions, NlpProblem, solve_nlp


def quadratic_residual(A, b):
    return NlpProblem(
        m=A.shape[1],
        res=lambda z: A @ z - b,
        res_jac=lambda z: A,
    )


def test_unconstrained_least_squares_matches_normal_equations(rng):
    A = rng.standard_normal((8, 4))
    b = rng.standard_normal(8)
    sol = solve_nlp(quadratic_residual(A, b), np.zeros(4))
    z_star = np.linalg.lstsq(A, b, rcond=None)[0]
    assert sol.converged
    assert np.max(np.abs(sol.z - z_star)) < 1e-8
    # Gauss-Newton is exact on a quadratic: one step from any start
    assert sol.iterations <= 3


def test_equality_constrained_quadratic_has_uniform_solution():
    # min |z|^2 s.t. sum z = 1 -> z_i = 1/m
    m = 5
    prob = NlpProblem(
        m=m,
        res=lambda z: z.copy(),
        res_jac=lambda z: np.eye(m),
        ce=lambda z: np.array([z.sum() - 1.0]),
        ce_jac=lambda z: np.ones((1, m)),
    )
    sol = solve_nlp(prob, np.arange(m, dtype=float))
    assert sol.converged
    assert np.max(np.abs(sol.z - 1.0 / m)) < 1e-8
    assert abs(sol.value - 1.0 / m) < 1e-8


def test_kkt_solution_matches_hand_computation():
    # min (z0-1)^2 + (z1-2)^2 s.t. z0 - z1 = 0 -> z = (1.5, 1.5)
    prob = NlpProblem(
        m=2,
        res=lambda z: z - np.array([1.0, 2.0]),
        res_jac=lambda z: np.eye(2),
        ce=lambda z: np.array([z[0] - z[1]]),
        ce_jac=lambda z: np.array([[1.0, -1.0]]),
    )
    sol = solve_nlp(prob, np.zeros(2))
    assert sol.converged
    assert np.max(np.abs(sol.z - 1.5)) < 1e-9


def test_active_box_bound():
    # min (z-2)^2 with z <= 1 -> z = 1
    prob = NlpProblem(
        m=1,
        res=lambda z: z - 2.0,
        res_jac=lambda z: np.eye(1),
        z_hi=np.array([1.0]),
    )
    sol = solve_nlp(prob, np.array([0.0]))
    assert sol.converged
    assert abs(sol.z[0] - 1.0) < 1e-10


def test_initial_guess_projected_into_box():
    prob = NlpProblem(
        m=1,
        res=lambda z: z - 2.0,
        res_jac=lambda z: np.eye(1),
        z_lo=np.array([-1.0]),
        z_hi=np.array([1.0]),
    )
    sol = solve_nlp(prob, np.array([50.0]))
    assert abs(sol.z[0] - 1.0) < 1e-10


def test_gradient_path_solves_rosenbrock():
    def phi(z):
        return (1 - z[0]) ** 2 + 100.0 * (z[1] - z[0] ** 2) ** 2

    def grad(z):
        return np.array(
            [
                -2 * (1 - z[0]) - 400.0 * z[0] * (z[1] - z[0] ** 2),
                200.0 * (z[1] - z[0] ** 2),
            ]
        )

    sol = solve_nlp(
        NlpProblem(m=2, phi=phi, grad=grad),
        np.array([-1.2, 1.0]),
        NlpOptions(max_iter=500),
    )
    assert np.max(np.abs(sol.z - 1.0)) < 1e-5


def test_hinge_penalty_matches_grid_search_minimizer():
    # min (z-2)^2 + 10 * max(0, z-1): exact-penalty minimizer at the kink z=1
    hinge = HingeTerm(weight=10.0, s=lambda z: z[0] - 1.0, s_grad=lambda z: np.array([1.0]))
    prob = NlpProblem(
        m=1,
        res=lambda z: z - 2.0,
        res_jac=lambda z: np.eye(1),
        hinges=(hinge,),
    )
    sol = solve_nlp(prob, np.array([4.0]))
    grid = np.linspace(-1, 4, 100001)
    vals = (grid - 2.0) ** 2 + 10.0 * np.maximum(0.0, grid - 1.0)
    z_grid = grid[np.argmin(vals)]
    assert abs(sol.z[0] - z_grid) < 1e-3
    assert abs(sol.z[0] - 1.0) < 1e-3
    # reported value is the exact (nonsmoothed) objective
    assert abs(sol.value - prob.objective_exact(sol.z)) < 1e-12


def test_inactive_hinge_leaves_minimizer_untouched():
    hinge = HingeTerm(weight=10.0, s=lambda z: z[0] - 5.0, s_grad=lambda z: np.array([1.0]))
    prob = NlpProblem(
        m=1, res=lambda z: z - 2.0, res_jac=lambda z: np.eye(1), hinges=(hinge,)
    )
    sol = solve_nlp(prob, np.array([0.0]))
    assert abs(sol.z[0] - 2.0) < 1e-4


def test_inconsistent_equalities_reported_infeasible():
    prob = NlpProblem(
        m=1,
        res=lambda z: z.copy(),
        res_jac=lambda z: np.eye(1),
        ce=lambda z: np.array([z[0], z[0] - 1.0]),
        ce_jac=lambda z: np.array([[1.0], [1.0]]),
    )
    sol = solve_nlp(prob, np.array([0.3]))
    assert sol.status in ("Infeasible", "Degenerate")
    assert sol.eq_residual > 1e-4


def test_problem_validation():
    with pytest.raises(ValueError):
        NlpProblem(m=2)
    with pytest.raises(ValueError):
        NlpProblem(
            m=1,
            res=lambda z: z,
            res_jac=lambda z: np.eye(1),
            z_lo=np.array([1.0]),
            z_hi=np.array([0.0]),
        )
    with pytest.raises(ValueError):
        NlpProblem(
            m=1,
            res=lambda z: z,
            res_jac=lambda z: np.eye(1),
            hinges=(HingeTerm(weight=0.0, s=lambda z: z[0], s_grad=lambda z: np.ones(1)),),
        )


def test_solver_is_deterministic(rng):
    A = rng.standard_normal((6, 3))
    b = rng.standard_normal(6)
    z0 = rng.standard_normal(3)
    s1 = solve_nlp(quadratic_residual(A, b), z0)
    s2 = solve_nlp(quadratic_residual(A, b), z0)
    assert np.array_equal(s1.z, s2.z)
    assert s1.value == s2.value and s1.iterations == s2.iterations
