"""Unit tests for schemes, histories, discrete residuals, and the FOM march."""

import numpy as np
import pytest

from conrom import (DimensionError, DiscreteStep, FullOrderModel,
                    InvalidSchemeError, LinearMultistepScheme, StateHistory,
                    StepFailureError, continuous_residual, discrete_residual,
                    discrete_velocity, solve_fom, total_variation)


def scalar_decay_model():
    return FullOrderModel(
        dim=1, n_mu=0,
        velocity=lambda x, t, mu: -x,
        velocity_jacobian=lambda x, t, mu: -np.eye(1),
        initial_state=lambda mu: np.ones(1))


# ---------------------------------------------------------------------------
# scheme construction


def test_backward_euler_coefficients():
    scheme = LinearMultistepScheme.backward_euler(0.1, 5)
    np.testing.assert_array_equal(scheme.alpha, [1.0, -1.0])
    np.testing.assert_array_equal(scheme.beta, [1.0, 0.0])
    assert scheme.k == 1
    assert not scheme.is_explicit
    assert scheme.q == 0
    assert scheme.time(3) == pytest.approx(0.3)


def test_explicit_euler_coefficients():
    scheme = LinearMultistepScheme.explicit_euler(0.25, 4)
    np.testing.assert_array_equal(scheme.alpha, [1.0, -1.0])
    np.testing.assert_array_equal(scheme.beta, [0.0, 1.0])
    assert scheme.is_explicit
    assert scheme.q == 1


def test_scheme_rejects_nonvanishing_alpha_sum():
    with pytest.raises(InvalidSchemeError):
        LinearMultistepScheme([1.0, -0.5], [1.0, 0.0], 0.1, 3)


def test_scheme_rejects_zero_leading_alpha():
    with pytest.raises(InvalidSchemeError):
        LinearMultistepScheme([0.0, 0.0], [1.0, 0.0], 0.1, 3)


def test_scheme_rejects_length_mismatch():
    with pytest.raises(InvalidSchemeError):
        LinearMultistepScheme([1.0, -1.0, 0.0], [1.0, 0.0], 0.1, 3)


def test_scheme_rejects_all_zero_beta():
    with pytest.raises(InvalidSchemeError):
        LinearMultistepScheme([1.0, -1.0], [0.0, 0.0], 0.1, 3)


def test_scheme_rejects_bad_step_size_and_count():
    with pytest.raises(InvalidSchemeError):
        LinearMultistepScheme([1.0, -1.0], [1.0, 0.0], 0.0, 3)
    with pytest.raises(InvalidSchemeError):
        LinearMultistepScheme([1.0, -1.0], [1.0, 0.0], 0.1, 0)


# ---------------------------------------------------------------------------
# state history


def test_history_push_copies_input():
    hist = StateHistory(1)
    x = np.array([1.0, 2.0])
    hist.push(x)
    x[0] = 99.0
    np.testing.assert_array_equal(hist.state(1), [1.0, 2.0])


def test_history_depth_and_order():
    hist = StateHistory(2)
    assert not hist.full
    hist.push(np.array([1.0]))
    hist.push(np.array([2.0]))
    assert hist.full
    assert hist.state(1)[0] == 2.0
    assert hist.state(2)[0] == 1.0
    hist.push(np.array([3.0]))
    assert hist.state(1)[0] == 3.0
    assert hist.state(2)[0] == 2.0


def test_history_rejects_out_of_range_offsets():
    hist = StateHistory(2)
    hist.push(np.array([1.0]))
    with pytest.raises(IndexError):
        hist.state(2)
    with pytest.raises(IndexError):
        hist.state(0)


def test_history_missing_velocity_is_an_error():
    hist = StateHistory(1)
    hist.push(np.array([1.0]))
    with pytest.raises(ValueError, match="velocity"):
        hist.velocity(1)


def test_history_requires_positive_depth():
    with pytest.raises(ValueError):
        StateHistory(0)


# ---------------------------------------------------------------------------
# residual definitions


def test_continuous_residual_is_velocity_mismatch():
    model = scalar_decay_model()
    x = np.array([2.0])
    r = continuous_residual(model, np.array([0.5]), x, 0.0, ())
    # f(x) = -2, so r = 0.5 - (-2) = 2.5
    np.testing.assert_allclose(r, [2.5])
    exact = continuous_residual(model, model.velocity(x, 0.0, ()), x, 0.0, ())
    np.testing.assert_array_equal(exact, [0.0])


def test_discrete_residual_zero_at_scheme_solution():
    # BE with dt = 0.5 on xdot = -x: the update x = x_prev / 1.5 zeroes r
    model = scalar_decay_model()
    scheme = LinearMultistepScheme.backward_euler(0.5, 2)
    hist = StateHistory(1)
    hist.push(np.ones(1), model.velocity(np.ones(1), 0.0, ()))
    xi = np.array([1.0 / 1.5])
    r = discrete_residual(model, scheme, hist, xi, 1, ())
    np.testing.assert_allclose(r, [0.0], atol=1e-15)


def test_backward_euler_scalar_geometric_decay():
    model = scalar_decay_model()
    scheme = LinearMultistepScheme.backward_euler(0.5, 2)
    traj = solve_fom(model, scheme, ())
    expected = np.array([[1.0], [1.0 / 1.5], [1.0 / 1.5 ** 2]])
    np.testing.assert_allclose(traj.states, expected, atol=1e-12)
    np.testing.assert_allclose(traj.times, [0.0, 0.5, 1.0])
    assert traj.n_steps == 2


def test_discrete_velocity_matches_divided_difference():
    model = scalar_decay_model()
    hist = StateHistory(1)
    x_prev = np.array([0.8])
    hist.push(x_prev, model.velocity(x_prev, 0.0, ()))
    xi = np.array([0.5])
    for scheme in (LinearMultistepScheme.backward_euler(0.25, 2),
                   LinearMultistepScheme.explicit_euler(0.25, 2)):
        vbar = discrete_velocity(model, scheme, hist, xi, 1, ())
        np.testing.assert_allclose(vbar, (xi - x_prev) / 0.25)


@pytest.mark.parametrize("kind", ["backward_euler", "explicit_euler"])
def test_discrete_residual_consistency_identity(kind):
    # r^n(xi) = dt beta_q (vbar(xi) - f(paired state, t^{n-q})) for any xi
    rng = np.random.default_rng(3)
    model = FullOrderModel(
        dim=3, n_mu=0,
        velocity=lambda x, t, mu: np.array(
            [-x[0] * x[1], x[2] ** 2 - x[0], np.sin(x[1]) + t]),
        velocity_jacobian=lambda x, t, mu: np.array(
            [[-x[1], -x[0], 0.0],
             [-1.0, 0.0, 2.0 * x[2]],
             [0.0, np.cos(x[1]), 0.0]]),
        initial_state=lambda mu: np.array([1.0, 0.5, -0.25]))
    scheme = getattr(LinearMultistepScheme, kind)(0.1, 4)
    hist = StateHistory(1)
    x_prev = model.initial_state(())
    hist.push(x_prev, model.velocity(x_prev, 0.0, ()))
    step = DiscreteStep(model, scheme, hist, 1, ())
    for _ in range(3):
        xi = x_prev + 0.3 * rng.standard_normal(3)
        lhs = step.residual(xi)
        q = scheme.q
        rhs = scheme.dt * scheme.beta[q] * continuous_residual(
            model, step.velocity_map(xi), step.paired_state(xi),
            step.t_nq, ())
        np.testing.assert_allclose(lhs, rhs, atol=1e-13)


def test_discrete_step_guards_inputs():
    model = scalar_decay_model()
    scheme = LinearMultistepScheme.backward_euler(0.5, 2)
    with pytest.raises(DimensionError):
        DiscreteStep(model, scheme, StateHistory(1), 1, ())
    hist = StateHistory(1)
    hist.push(np.ones(1))
    with pytest.raises(IndexError):
        DiscreteStep(model, scheme, hist, 3, ())


# ---------------------------------------------------------------------------
# solve_fom


def test_explicit_march_skips_newton():
    model = scalar_decay_model()
    scheme = LinearMultistepScheme.explicit_euler(0.25, 3)
    traj = solve_fom(model, scheme, ())
    # x_next = x + dt f(x) = 0.75 x for this model
    np.testing.assert_allclose(traj.states.ravel(),
                               [1.0, 0.75, 0.75 ** 2, 0.75 ** 3],
                               atol=1e-14)
    for diag in traj.diagnostics:
        assert diag["newton_iterations"] == 0
        assert diag["residual_norm"] == 0.0


def test_implicit_march_records_newton_diagnostics():
    model = scalar_decay_model()
    scheme = LinearMultistepScheme.backward_euler(0.5, 3)
    traj = solve_fom(model, scheme, ())
    assert len(traj.diagnostics) == 3
    for diag in traj.diagnostics:
        assert diag["newton_iterations"] >= 1
        assert diag["residual_norm"] <= 1e-10


def test_step_failure_carries_partial_trajectory():
    # a starved Newton cap cannot solve the stiff cubic step
    model = FullOrderModel(
        dim=1, n_mu=0,
        velocity=lambda x, t, mu: -x ** 3,
        velocity_jacobian=lambda x, t, mu: np.array([[-3.0 * x[0] ** 2]]),
        initial_state=lambda mu: np.array([2.0]))
    scheme = LinearMultistepScheme.backward_euler(10.0, 3)
    with pytest.raises(StepFailureError) as err:
        solve_fom(model, scheme, (), newton_max_iter=1,
                  newton_abs_tol=1e-15, newton_rel_tol=0.0)
    assert err.value.step == 1
    assert err.value.partial.states.shape == (1, 1)
    np.testing.assert_array_equal(err.value.partial.states[0], [2.0])


def test_burgers_shock_steepens(burgers):
    traj = burgers.foms[(1.2, 0.6)]
    jump0 = np.abs(np.diff(traj.states[0])).max()
    jump_end = np.abs(np.diff(traj.states[-1])).max()
    assert jump_end >= 2.0 * jump0


def test_burgers_total_variation_nonincreasing(burgers):
    tvs = [total_variation(state) for state in burgers.foms[(1.2, 0.6)].states]
    diffs = np.diff(tvs)
    assert np.all(diffs <= 1e-10)
