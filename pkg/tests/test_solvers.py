"""Unit tests for the Newton, Powell-hybrid, and SQP kernels."""

import numpy as np
import pytest

from kkt_battery import build_cases, check_case

from conrom import (NlpProblem, SolverOptions, hybrid_root, newton_solve,
                    solve_nlp, solve_qp)


# ---------------------------------------------------------------------------
# newton_solve


def test_newton_affine_single_iteration():
    a = np.array([[2.0, 1.0], [1.0, 3.0]])
    b = np.array([1.0, 2.0])
    res = newton_solve(lambda x: a @ x - b, lambda x: a, np.zeros(2))
    assert res.converged
    assert res.iterations == 1
    np.testing.assert_allclose(res.point, np.linalg.solve(a, b), atol=1e-12)


def test_newton_scalar_quadratic():
    res = newton_solve(lambda x: np.array([x[0] ** 2 - 4.0]),
                       lambda x: np.array([[2.0 * x[0]]]),
                       np.array([3.0]))
    assert res.converged
    np.testing.assert_allclose(res.point, [2.0], atol=1e-10)


def test_newton_zero_iterations_at_root():
    res = newton_solve(lambda x: x - 1.0, lambda x: np.eye(2),
                       np.ones(2))
    assert res.converged
    assert res.iterations == 0
    assert res.residual_norm == 0.0


def test_newton_reports_failure_on_iteration_cap():
    # residual with no root; the solver must not claim success
    res = newton_solve(lambda x: np.array([x[0] ** 2 + 1.0]),
                       lambda x: np.array([[2.0 * x[0]]]),
                       np.array([2.0]), max_iter=8)
    assert not res.converged


# ---------------------------------------------------------------------------
# hybrid_root


def test_hybrid_affine_system():
    a = np.array([[3.0, 1.0], [1.0, 2.0]])
    b = np.array([0.5, -1.0])
    res = hybrid_root(lambda x: a @ x - b, np.zeros(2))
    assert res.converged
    np.testing.assert_allclose(res.point, np.linalg.solve(a, b), atol=1e-8)


def test_hybrid_circle_diagonal_intersection():
    # x^2 + y^2 = 1 and x = y meet at (sqrt(1/2), sqrt(1/2))
    def fn(x):
        return np.array([x[0] ** 2 + x[1] ** 2 - 1.0, x[0] - x[1]])

    res = hybrid_root(fn, np.array([0.8, 0.6]))
    assert res.converged
    root = np.sqrt(0.5)
    np.testing.assert_allclose(res.point, [root, root], atol=1e-5)


def test_hybrid_immediate_root():
    res = hybrid_root(lambda x: x - 2.0, np.array([2.0, 2.0]))
    assert res.converged
    assert res.residual_norm == 0.0


def test_hybrid_maxfev_exhaustion_is_reported():
    def fn(x):
        return np.array([np.exp(x[0]) + 1.0])

    res = hybrid_root(fn, np.array([0.0]), maxfev=15)
    assert not res.converged


def test_hybrid_agrees_with_newton():
    def fn(x):
        return np.array([x[0] ** 3 - x[1], np.cos(x[1]) - x[0]])

    def jac(x):
        return np.array([[3.0 * x[0] ** 2, -1.0],
                         [-1.0, -np.sin(x[1])]])

    x0 = np.array([0.9, 0.7])
    newt = newton_solve(fn, jac, x0)
    hyb = hybrid_root(fn, x0)
    assert newt.converged and hyb.converged
    np.testing.assert_allclose(hyb.point, newt.point, atol=1e-5)


def test_hybrid_deterministic():
    def fn(x):
        return np.array([x[0] ** 2 + x[1] - 1.0, x[0] - x[1] ** 3])

    first = hybrid_root(fn, np.array([0.5, 0.5]))
    second = hybrid_root(fn, np.array([0.5, 0.5]))
    assert np.array_equal(first.point, second.point)
    assert first.n_fev == second.n_fev


# ---------------------------------------------------------------------------
# solve_qp


def test_qp_equality_only_matches_kkt_solve():
    h = np.array([[2.0, 0.3], [0.3, 1.0]])
    g = np.array([1.0, -2.0])
    a = np.array([[1.0, 1.0]])
    b = np.array([0.5])
    res = solve_qp(h, g, a_eq=a, b_eq=b)
    kkt = np.block([[h, a.T], [a, np.zeros((1, 1))]])
    sol = np.linalg.solve(kkt, np.concatenate([-g, b]))
    np.testing.assert_allclose(res.point, sol[:2], atol=1e-9)


def test_qp_inactive_inequalities_reduce_to_newton_step():
    # constraint x1 >= -100 stays slack at the unconstrained optimum (1, 2)
    h = np.diag([1.0, 4.0])
    g = np.array([-1.0, -8.0])
    res = solve_qp(h, g, a_ineq=np.array([[1.0, 0.0]]),
                   b_ineq=np.array([-100.0]))
    np.testing.assert_allclose(res.point, [1.0, 2.0], atol=1e-9)
    assert np.all(res.multipliers_ineq <= 1e-12)


def test_qp_active_box_constraint():
    # unconstrained optimum (2, 0) is clipped by -x1 >= -1, i.e. x1 <= 1
    h = np.eye(2)
    g = np.array([-2.0, 0.0])
    res = solve_qp(h, g, a_ineq=np.array([[-1.0, 0.0]]),
                   b_ineq=np.array([-1.0]))
    np.testing.assert_allclose(res.point, [1.0, 0.0], atol=1e-9)
    assert res.multipliers_ineq[0] > 0.1


# ---------------------------------------------------------------------------
# solve_nlp battery and invariants


@pytest.mark.parametrize("case", build_cases(), ids=lambda c: c.name)
def test_nlp_battery(case):
    check_case(case)


def test_nlp_battery_has_at_least_ten_problems():
    assert len(build_cases()) >= 10


def test_nlp_polygon_matches_grid_search_oracle():
    # brute-force the pentagon on a 1e-3 grid, independent of the solver
    case = next(c for c in build_cases() if c.name == "polygon")

    def grid_argmin(x_lo, x_hi, y_lo, y_hi, step):
        xs = np.arange(x_lo, x_hi + step / 2, step)
        ys = np.arange(y_lo, y_hi + step / 2, step)
        xx, yy = np.meshgrid(xs, ys)
        feas = ((xx - 2.0 * yy + 2.0 >= 0.0)
                & (-xx - 2.0 * yy + 6.0 >= 0.0)
                & (-xx + 2.0 * yy + 2.0 >= 0.0)
                & (xx >= 0.0) & (yy >= 0.0))
        obj = np.where(feas, (xx - 1.0) ** 2 + (yy - 2.5) ** 2, np.inf)
        i, j = np.unravel_index(np.argmin(obj), obj.shape)
        return np.array([xx[i, j], yy[i, j]])

    coarse = grid_argmin(0.0, 3.0, 0.0, 3.0, 1e-2)
    grid_opt = grid_argmin(coarse[0] - 0.05, coarse[0] + 0.05,
                           coarse[1] - 0.05, coarse[1] + 0.05, 1e-3)
    np.testing.assert_allclose(grid_opt, [1.4, 1.7], atol=2e-3)
    result = solve_nlp(case.problem)
    np.testing.assert_allclose(result.point, grid_opt, atol=1e-4 + 2e-3)
    # hand KKT refinement: active face x1 - 2 x2 + 2 = 0 with multiplier 0.8
    np.testing.assert_allclose(result.point, [1.4, 1.7], atol=1e-4)


def test_nlp_positive_multiplier_on_active_bound():
    case = next(c for c in build_cases() if c.name == "clipped_quadratic")
    result = solve_nlp(case.problem)
    # gradient at optimum is -2, so the active-bound multiplier is 2
    np.testing.assert_allclose(result.multipliers_ineq, [2.0], atol=1e-6)


def test_nlp_unconstrained_matches_direct_solve_on_quadratics():
    rng = np.random.default_rng(7)
    for dim in (2, 5, 9):
        m = rng.standard_normal((dim, dim))
        h = m @ m.T + dim * np.eye(dim)
        c = rng.standard_normal(dim)
        problem = NlpProblem(
            dim,
            lambda x, h=h, c=c: 0.5 * x @ h @ x - c @ x,
            lambda x, h=h, c=c: h @ x - c)
        result = solve_nlp(problem)
        assert result.converged
        np.testing.assert_allclose(result.point, np.linalg.solve(h, c),
                                   atol=1e-6 * (1.0 + np.linalg.norm(c)))


def test_nlp_deterministic():
    case = next(c for c in build_cases() if c.name == "polygon")
    first = solve_nlp(case.problem)
    second = solve_nlp(case.problem)
    assert np.array_equal(first.point, second.point)
    assert first.iterations == second.iterations
    assert np.array_equal(first.multipliers_ineq, second.multipliers_ineq)


def test_nlp_warm_start_accepted():
    case = next(c for c in build_cases() if c.name == "hyperplane")
    opts = SolverOptions(warm_start=np.array([1.0, 0.01, -0.01]))
    result = solve_nlp(case.problem, opts)
    assert result.converged
    np.testing.assert_allclose(result.point, case.x_star, atol=1e-6)


def test_nlp_infeasible_constraints_do_not_converge():
    # x <= -1 and x >= 1 cannot both hold
    a = np.array([[-1.0], [1.0]])
    b = np.array([-1.0, -1.0])
    problem = NlpProblem(
        1, lambda x: float(x[0] ** 2), lambda x: 2.0 * x,
        n_ineq=2,
        ineq_value=lambda x: b - a @ x,
        ineq_jacobian=lambda x: -a.copy())
    result = solve_nlp(problem, SolverOptions(max_iter=60))
    assert not result.converged
