"""Parameterized ODE full-order models and linear multistep time discretization.

A full-order model is the semi-discrete system

    dx/dt = f(x, t; mu),    x(0) = x0(mu),    x in R^N,

advanced by a k-step linear multistep scheme whose step-n residual is

    r^n(xi) = alpha_0 xi - dt*beta_0 f(xi, t^n; mu)
              + sum_j alpha_j x^{n-j} - dt * sum_j beta_j f(x^{n-j}, t^{n-j}; mu)

with j = 1..k and sum_j alpha_j = 0 (consistency).  The discrete velocity
map recovers the time-derivative approximation implied by the scheme and is
the handle through which rate constraints enter the reduced-order problems.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse
import scipy.sparse.linalg


class DimensionError(ValueError):
    """An argument's shape violates the operation contract."""


class InvalidSchemeError(ValueError):
    """Multistep coefficients violate consistency or zero-divisor rules."""


class StepFailureError(RuntimeError):
    """A time step failed to converge.

    Carries the failing step index and the partial trajectory computed so
    far, so callers can report where a run died.
    """

    def __init__(self, message, step=None, partial=None):
        super().__init__(message)
        self.step = step
        self.partial = partial


@dataclass(frozen=True)
class FullOrderModel:
    """Parameterized ODE with velocity f, its state Jacobian, and the IC map.

    Attributes
    ----------
    dim : int
        State dimension N.
    n_mu : int
        Number of parameters.
    velocity : callable(x, t, mu) -> ndarray (N,)
    velocity_jacobian : callable(x, t, mu) -> (N, N) dense or sparse matrix
    initial_state : callable(mu) -> ndarray (N,)
    """

    dim: int
    n_mu: int
    velocity: Callable
    velocity_jacobian: Callable
    initial_state: Callable

    def check_state(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise DimensionError(
                f"state has shape {x.shape}, expected ({self.dim},)")
        return x

    def check_params(self, mu):
        mu = np.asarray(mu, dtype=float).ravel()
        if mu.shape != (self.n_mu,):
            raise DimensionError(
                f"parameter vector has length {mu.size}, expected {self.n_mu}")
        if not np.all(np.isfinite(mu)):
            raise ValueError("parameter vector has non-finite entries")
        return mu


@dataclass(frozen=True)
class LinearMultistepScheme:
    """Coefficients (alpha_j, beta_j), j = 0..k, plus step size and count.

    alpha_0 must be nonzero and sum(alpha) must vanish.  The scheme is
    explicit iff beta_0 == 0, in which case beta_1 must be nonzero so the
    discrete velocity map is defined.
    """

    alpha: tuple
    beta: tuple
    dt: float
    n_steps: int

    def __post_init__(self):
        object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        if len(self.alpha) != len(self.beta) or len(self.alpha) < 2:
            raise InvalidSchemeError("alpha and beta must share length k+1 >= 2")
        if self.alpha[0] == 0.0:
            raise InvalidSchemeError("alpha_0 must be nonzero")
        if abs(sum(self.alpha)) > 1e-12 * max(abs(a) for a in self.alpha):
            raise InvalidSchemeError("consistency requires sum(alpha) == 0")
        if self.beta[self.q] == 0.0:
            raise InvalidSchemeError(
                "beta_0 (implicit) or beta_1 (explicit) must be nonzero")
        if not (self.dt > 0.0):
            raise InvalidSchemeError("dt must be positive")
        if self.n_steps < 1:
            raise InvalidSchemeError("n_steps must be >= 1")

    @property
    def k(self):
        return len(self.alpha) - 1

    @property
    def is_explicit(self):
        return self.beta[0] == 0.0

    @property
    def q(self):
        """Velocity-map offset: 0 for implicit schemes, 1 for explicit."""
        return 1 if self.beta[0] == 0.0 else 0

    def time(self, n):
        return n * self.dt

    @classmethod
    def backward_euler(cls, dt, n_steps):
        return cls(alpha=(1.0, -1.0), beta=(1.0, 0.0), dt=dt, n_steps=n_steps)

    @classmethod
    def explicit_euler(cls, dt, n_steps):
        return cls(alpha=(1.0, -1.0), beta=(0.0, 1.0), dt=dt, n_steps=n_steps)


class StateHistory:
    """Ring buffer of the last k accepted states and their cached velocities.

    ``state(j)`` returns x^{n-j} for j = 1..k relative to the step about to
    be computed; ``velocity(j)`` returns the cached f(x^{n-j}, t^{n-j}; mu).
    A velocity slot may be None when the scheme never consumes it.
    """

    def __init__(self, k):
        if k < 1:
            raise ValueError("history depth k must be >= 1")
        self.k = k
        self._states = deque(maxlen=k)
        self._velocities = deque(maxlen=k)

    def push(self, state, velocity=None):
        self._states.append(np.array(state, dtype=float, copy=True))
        self._velocities.append(
            None if velocity is None else np.array(velocity, dtype=float, copy=True))

    def state(self, j):
        if not 1 <= j <= len(self._states):
            raise IndexError(f"history holds {len(self._states)} states, asked for j={j}")
        return self._states[-j]

    def velocity(self, j):
        if not 1 <= j <= len(self._velocities):
            raise IndexError(f"history holds {len(self._velocities)} entries, asked for j={j}")
        v = self._velocities[-j]
        if v is None:
            raise ValueError(f"velocity at offset j={j} was not cached")
        return v

    def __len__(self):
        return len(self._states)

    @property
    def full(self):
        return len(self._states) == self.k


@dataclass
class TrajectorySolution:
    """Time grid, states x^0..x^{N_T} (rows), and per-step solver diagnostics."""

    times: np.ndarray
    states: np.ndarray
    diagnostics: list = field(default_factory=list)

    @property
    def n_steps(self):
        return self.states.shape[0] - 1


def continuous_residual(model, v, xi, tau, nu):
    """ODE residual r(v, xi, tau; nu) = v - f(xi, tau; nu)."""
    xi = model.check_state(xi)
    v = np.asarray(v, dtype=float)
    if v.shape != xi.shape:
        raise DimensionError(f"velocity shape {v.shape} != state shape {xi.shape}")
    return v - model.velocity(xi, tau, nu)


class DiscreteStep:
    """Step-n residual and velocity map with the history sums precomputed.

    Freezing the sum over past states lets Newton and the reduced-order
    solvers re-evaluate r^n(xi) at many candidate states for one velocity
    call each.
    """

    def __init__(self, model, scheme, history, n, nu):
        if not history.full:
            raise DimensionError(
                f"scheme needs {scheme.k} past states, history holds {len(history)}")
        if not 1 <= n <= scheme.n_steps:
            raise IndexError(f"step index {n} outside 1..{scheme.n_steps}")
        self.model = model
        self.scheme = scheme
        self.n = n
        self.nu = nu
        self.t_n = scheme.time(n)
        q = scheme.q
        self.t_nq = scheme.time(n - q)
        self.state_q = history.state(q) if q > 0 else None

        alpha, beta, dt = scheme.alpha, scheme.beta, scheme.dt
        w = np.zeros(model.dim)
        wv = np.zeros(model.dim)
        for j in range(1, scheme.k + 1):
            xj = history.state(j)
            w += alpha[j] * xj
            wv += alpha[j] * xj
            if beta[j] != 0.0:
                fj = dt * beta[j] * history.velocity(j)
                w -= fj
                if j >= 1 + q:
                    wv -= fj
        self._w = w
        self._wv = wv

    def residual(self, xi):
        scheme = self.scheme
        r = scheme.alpha[0] * xi + self._w
        if scheme.beta[0] != 0.0:
            r = r - scheme.dt * scheme.beta[0] * self.model.velocity(xi, self.t_n, self.nu)
        return r

    def jacobian(self, xi):
        scheme = self.scheme
        n = self.model.dim
        if scheme.beta[0] == 0.0:
            return scheme.alpha[0] * scipy.sparse.identity(n, format="csr")
        jac = self.model.velocity_jacobian(xi, self.t_n, self.nu)
        coeff = scheme.dt * scheme.beta[0]
        if scipy.sparse.issparse(jac):
            return (scheme.alpha[0] * scipy.sparse.identity(n, format="csr")
                    - coeff * jac).tocsr()
        return scheme.alpha[0] * np.eye(n) - coeff * np.asarray(jac)

    def velocity_map(self, xi):
        """Discrete velocity vbar^{n-q}(xi); the state it pairs with is
        xi itself for implicit schemes and x^{n-1} for explicit ones."""
        scheme = self.scheme
        return (scheme.alpha[0] * xi + self._wv) / (scheme.dt * scheme.beta[scheme.q])

    def paired_state(self, xi):
        """State argument matching velocity_map in the continuous residual."""
        return xi if self.scheme.q == 0 else self.state_q


def discrete_residual(model, scheme, history, xi, n, nu):
    """O-Delta-E residual r^n(xi) given the k-deep history of accepted steps."""
    xi = model.check_state(xi)
    return DiscreteStep(model, scheme, history, n, nu).residual(xi)


def discrete_velocity(model, scheme, history, xi, n, nu):
    """Velocity vbar^{n-q}(xi) implied by the scheme at candidate state xi."""
    xi = model.check_state(xi)
    return DiscreteStep(model, scheme, history, n, nu).velocity_map(xi)


def solve_fom(model, scheme, mu, newton_abs_tol=1e-10, newton_rel_tol=1e-6,
              newton_max_iter=25):
    """March the full-order model over the scheme's time grid.

    Explicit schemes update in closed form; implicit ones solve r^n = 0 by
    Newton with the scheme Jacobian alpha_0 I - dt beta_0 df/dx.  Raises
    StepFailureError (with the partial trajectory attached) if any step
    fails to converge.
    """
    from .solvers import newton_solve

    mu = model.check_params(mu)
    x0 = model.check_state(model.initial_state(mu))
    n_steps = scheme.n_steps
    needs_past_velocity = any(b != 0.0 for b in scheme.beta[1:])

    states = np.empty((n_steps + 1, model.dim))
    states[0] = x0
    times = scheme.dt * np.arange(n_steps + 1)
    diagnostics = []

    history = StateHistory(scheme.k)
    f0 = model.velocity(x0, 0.0, mu) if needs_past_velocity else None
    history.push(x0, f0)

    for n in range(1, n_steps + 1):
        step = DiscreteStep(model, scheme, history, n, mu)
        if scheme.is_explicit:
            x_new = -step._w / scheme.alpha[0]
            diagnostics.append({"step": n, "newton_iterations": 0,
                                "residual_norm": 0.0})
        else:
            result = newton_solve(step.residual, step.jacobian, states[n - 1],
                                  abs_tol=newton_abs_tol, rel_tol=newton_rel_tol,
                                  max_iter=newton_max_iter)
            if not result.converged:
                partial = TrajectorySolution(times[:n], states[:n], diagnostics)
                raise StepFailureError(
                    f"Newton failed at step {n}: |r| = {result.residual_norm:.3e}",
                    step=n, partial=partial)
            x_new = result.point
            diagnostics.append({"step": n, "newton_iterations": result.iterations,
                                "residual_norm": result.residual_norm})
        states[n] = x_new
        f_new = (model.velocity(x_new, times[n], mu)
                 if needs_past_velocity else None)
        history.push(x_new, f_new)

    return TrajectorySolution(times, states, diagnostics)
