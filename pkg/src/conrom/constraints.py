"""Equality and inequality constraints for constrained model reduction.

Two template shapes cover every family here:

kinematic
    cbar(xi, tau; nu) = 0 or dbar(xi, tau; nu) >= 0, functions of the state.
dynamic
    c(v, xi, tau; nu) = 0 or d(v, xi, tau; nu) >= 0, functions of a velocity
    and the state it is attached to.

Galerkin reduction imposes dynamic constraints on the reduced velocity
directly and kinematic ones through their rate form; least-squares
Petrov-Galerkin imposes kinematic constraints on the candidate state and
dynamic ones on the discrete velocity implied by the time scheme.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .basis import resolve_reference
from .fom import DimensionError, DiscreteStep


# ---------------------------------------------------------------------------
# scalar helpers

def total_variation(x):
    """TV(x) = sum |x_{i+1} - x_i|."""
    x = np.asarray(x, dtype=float)
    return float(np.sum(np.abs(np.diff(x))))


def tv_gradient(x):
    """Subgradient of TV at x with sign(0) taken as 0."""
    x = np.asarray(x, dtype=float)
    s = np.sign(np.diff(x))
    g = np.zeros_like(x)
    g[1:] += s
    g[:-1] -= s
    return g


def tvd_value(x, xdot):
    """Rate form -d/dt TV(x) = -sum sign(x_{i+1}-x_i)(xdot_{i+1}-xdot_i).

    Nonnegative iff the total variation is instantaneously non-increasing.
    The sign pattern is treated as frozen data, so the value is invariant
    under adding a constant to xdot.
    """
    x = np.asarray(x, dtype=float)
    xdot = np.asarray(xdot, dtype=float)
    return -float(np.sign(np.diff(x)) @ np.diff(xdot))


def tvb_value(x, bound):
    """Slack bound - TV(x); nonnegative when the TV bound holds."""
    return float(bound) - total_variation(x)


def ec_value(energy_gradient, xdot, source, x, tau, nu):
    """Energy-rate defect dE/dt - S = grad E(x) . xdot - S(tau; nu)."""
    g = np.asarray(energy_gradient(x), dtype=float)
    return float(g @ np.asarray(xdot, dtype=float)) - float(source(tau, nu))


# ---------------------------------------------------------------------------
# field layout

@dataclass(frozen=True)
class FieldLayout:
    """Contiguous partition of the state vector into named fields."""

    names: tuple
    boundaries: tuple   # offsets, length len(names)+1, starting at 0

    def __post_init__(self):
        if len(self.boundaries) != len(self.names) + 1:
            raise DimensionError("boundaries must have one more entry than names")
        if self.boundaries[0] != 0 or any(
                b >= e for b, e in zip(self.boundaries, self.boundaries[1:])):
            raise DimensionError("field boundaries must increase from 0")

    @property
    def dim(self):
        return self.boundaries[-1]

    def slices(self):
        return {name: slice(b, e) for name, b, e
                in zip(self.names, self.boundaries, self.boundaries[1:])}

    @classmethod
    def single(cls, name, n):
        return cls(names=(name,), boundaries=(0, n))

    @classmethod
    def blocks(cls, names, block_size):
        bounds = tuple(i * block_size for i in range(len(names) + 1))
        return cls(names=tuple(names), boundaries=bounds)


# ---------------------------------------------------------------------------
# constraint templates

@dataclass(frozen=True)
class KinematicConstraint:
    """State constraint with Jacobians w.r.t. state and time.

    value(xi, tau, nu) -> (n_rows,); jac_state -> (n_rows, N);
    jac_time -> (n_rows,).
    """

    n_rows: int
    value: Callable
    jac_state: Callable
    jac_time: Callable
    label: str = "kinematic"


@dataclass(frozen=True)
class DynamicConstraint:
    """Velocity/state constraint with Jacobians w.r.t. velocity and state.

    value(v, xi, tau, nu) -> (n_rows,); jac_velocity -> (n_rows, N);
    jac_state -> (n_rows, N).
    """

    n_rows: int
    value: Callable
    jac_velocity: Callable
    jac_state: Callable
    label: str = "dynamic"


@dataclass(frozen=True)
class ConstraintSet:
    """Constraints grouped by template and sense.

    kinematic_ineq rows follow the activation rule in the Galerkin setting:
    the rate form is imposed only where the slack dbar at the current state
    is <= activation_tol.
    """

    kinematic_eq: tuple = ()
    dynamic_eq: tuple = ()
    kinematic_ineq: tuple = ()
    dynamic_ineq: tuple = ()
    activation_tol: float = 0.0

    @property
    def is_empty(self):
        return not (self.kinematic_eq or self.dynamic_eq
                    or self.kinematic_ineq or self.dynamic_ineq)

    @property
    def n_eq_rows(self):
        return sum(c.n_rows for c in self.kinematic_eq + self.dynamic_eq)

    @property
    def n_ineq_rows(self):
        return sum(c.n_rows for c in self.kinematic_ineq + self.dynamic_ineq)


# ---------------------------------------------------------------------------
# concrete families

def rsum_constraint(model, rows):
    """Residual-sum equality C r(v, xi, tau; nu) = 0 for a selection matrix C."""
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    if rows.shape[1] != model.dim:
        raise DimensionError(f"C has {rows.shape[1]} columns, expected {model.dim}")

    def value(v, xi, tau, nu):
        return rows @ (v - model.velocity(xi, tau, nu))

    def jac_velocity(v, xi, tau, nu):
        return rows

    def jac_state(v, xi, tau, nu):
        jac = model.velocity_jacobian(xi, tau, nu)
        return -(rows @ jac)

    return DynamicConstraint(rows.shape[0], value, jac_velocity, jac_state,
                             label="rsum")


def tvd_constraint(field_slice=None):
    """Total-variation-diminishing inequality -d/dt TV(x) >= 0 (one row).

    The sign pattern sign(diff(x)) is frozen per evaluation, so the state
    Jacobian is taken as zero.
    """
    def _slice(vec):
        return vec if field_slice is None else vec[field_slice]

    def value(v, xi, tau, nu):
        return np.array([tvd_value(_slice(xi), _slice(v))])

    def jac_velocity(v, xi, tau, nu):
        row = np.zeros(np.asarray(xi).size)
        sub = _slice(row)
        s = np.sign(np.diff(_slice(np.asarray(xi, dtype=float))))
        sub[1:] -= s
        sub[:-1] += s
        return row[None, :]

    def jac_state(v, xi, tau, nu):
        return np.zeros((1, np.asarray(xi).size))

    return DynamicConstraint(1, value, jac_velocity, jac_state, label="tvd")


def tvb_constraint(bound, field_slice=None, label="tvb"):
    """Bounded-total-variation inequality bound - TV(x) >= 0 (one row)."""
    def _slice(vec):
        return vec if field_slice is None else vec[field_slice]

    def value(xi, tau, nu):
        return np.array([tvb_value(_slice(np.asarray(xi, dtype=float)), bound)])

    def jac_state(xi, tau, nu):
        row = np.zeros(np.asarray(xi).size)
        sub = _slice(row)
        sub[:] = -tv_gradient(_slice(np.asarray(xi, dtype=float)))
        return row[None, :]

    def jac_time(xi, tau, nu):
        return np.zeros(1)

    return KinematicConstraint(1, value, jac_state, jac_time, label=label)


def energy_conservation_constraint(energy_gradient, source,
                                   energy_hessian=None):
    """Energy-rate equality grad E(x) . v - S(tau; nu) = 0 (one row)."""
    def value(v, xi, tau, nu):
        return np.array([ec_value(energy_gradient, v, source, xi, tau, nu)])

    def jac_velocity(v, xi, tau, nu):
        return np.asarray(energy_gradient(xi), dtype=float)[None, :]

    def jac_state(v, xi, tau, nu):
        if energy_hessian is None:
            return np.zeros((1, np.asarray(xi).size))
        return (np.asarray(energy_hessian(xi)) @ np.asarray(v, dtype=float))[None, :]

    return DynamicConstraint(1, value, jac_velocity, jac_state, label="ec")


# ---------------------------------------------------------------------------
# reduced forms

@dataclass
class ReducedConstraintFunctions:
    """Constraint callables in reduced coordinates, ready for solve_nlp."""

    n_eq: int = 0
    eq_value: Optional[Callable] = None
    eq_jacobian: Optional[Callable] = None
    n_ineq: int = 0
    ineq_value: Optional[Callable] = None
    ineq_jacobian: Optional[Callable] = None
    kinematic_active: np.ndarray = field(default_factory=lambda: np.zeros(0, bool))


def galerkin_constraint_functions(cset, basis, x_ref, xhat, tau, nu):
    """Constraints on the reduced velocity vhat at frozen state/time.

    Kinematic rows enter through their rate form
    d/dt cbar = (d cbar/d xi) phi vhat + d cbar/d tau, with inequality rows
    subject to the activation rule.  Dynamic rows are composed with
    v = phi vhat at the decoded state.
    """
    phi = basis.phi
    ref = resolve_reference(x_ref, nu)
    state = ref + phi @ np.asarray(xhat, dtype=float)

    eq_affine = []      # (A, b): row A vhat + b = 0
    for con in cset.kinematic_eq:
        a = np.atleast_2d(con.jac_state(state, tau, nu)) @ phi
        b = np.atleast_1d(con.jac_time(state, tau, nu))
        eq_affine.append((a, b))
    ineq_affine = []
    active_flags = []
    for con in cset.kinematic_ineq:
        slack = np.atleast_1d(con.value(state, tau, nu))
        act = slack <= cset.activation_tol
        active_flags.append(act)
        if np.any(act):
            a = np.atleast_2d(con.jac_state(state, tau, nu))[act] @ phi
            b = np.atleast_1d(con.jac_time(state, tau, nu))[act]
            ineq_affine.append((a, b))
    kinematic_active = (np.concatenate(active_flags)
                        if active_flags else np.zeros(0, bool))

    dyn_eq = tuple(cset.dynamic_eq)
    dyn_ineq = tuple(cset.dynamic_ineq)
    n_eq = sum(a.shape[0] for a, _ in eq_affine) + sum(c.n_rows for c in dyn_eq)
    n_ineq = (sum(a.shape[0] for a, _ in ineq_affine)
              + sum(c.n_rows for c in dyn_ineq))
    if n_eq == 0 and n_ineq == 0:
        return ReducedConstraintFunctions(kinematic_active=kinematic_active)

    def eq_value(vhat):
        v = phi @ vhat
        parts = [a @ vhat + b for a, b in eq_affine]
        parts += [np.atleast_1d(c.value(v, state, tau, nu)) for c in dyn_eq]
        return np.concatenate(parts) if parts else np.zeros(0)

    def eq_jacobian(vhat):
        v = phi @ vhat
        parts = [a for a, _ in eq_affine]
        parts += [np.atleast_2d(c.jac_velocity(v, state, tau, nu)) @ phi
                  for c in dyn_eq]
        return np.vstack(parts) if parts else np.zeros((0, basis.p))

    def ineq_value(vhat):
        v = phi @ vhat
        parts = [a @ vhat + b for a, b in ineq_affine]
        parts += [np.atleast_1d(c.value(v, state, tau, nu)) for c in dyn_ineq]
        return np.concatenate(parts) if parts else np.zeros(0)

    def ineq_jacobian(vhat):
        v = phi @ vhat
        parts = [a for a, _ in ineq_affine]
        parts += [np.atleast_2d(c.jac_velocity(v, state, tau, nu)) @ phi
                  for c in dyn_ineq]
        return np.vstack(parts) if parts else np.zeros((0, basis.p))

    return ReducedConstraintFunctions(
        n_eq=n_eq, eq_value=eq_value, eq_jacobian=eq_jacobian,
        n_ineq=n_ineq, ineq_value=ineq_value, ineq_jacobian=ineq_jacobian,
        kinematic_active=kinematic_active)


def eval_galerkin_constraints(cset, basis, x_ref, vhat, xhat, tau, nu):
    """Stacked Galerkin constraint values/Jacobians at a given vhat."""
    funcs = galerkin_constraint_functions(cset, basis, x_ref, xhat, tau, nu)
    vhat = np.asarray(vhat, dtype=float)
    eq = funcs.eq_value(vhat) if funcs.n_eq else np.zeros(0)
    eq_jac = funcs.eq_jacobian(vhat) if funcs.n_eq else np.zeros((0, basis.p))
    ineq = funcs.ineq_value(vhat) if funcs.n_ineq else np.zeros(0)
    ineq_jac = (funcs.ineq_jacobian(vhat) if funcs.n_ineq
                else np.zeros((0, basis.p)))
    return eq, eq_jac, ineq, ineq_jac, funcs.kinematic_active


def lspg_constraint_functions(cset, basis, x_ref, model, scheme, history, n, nu):
    """Constraints on the candidate reduced state xihat at step n.

    Kinematic rows act on the decoded candidate at t^n; dynamic rows act on
    the discrete velocity vbar^{n-q} paired with the candidate state (q = 0)
    or the previous accepted state (q = 1).
    """
    phi = basis.phi
    ref = resolve_reference(x_ref, nu)
    step = DiscreteStep(model, scheme, history, n, nu)
    t_n = step.t_n
    t_q = step.t_nq
    q = scheme.q
    vbar_coeff = scheme.alpha[0] / (scheme.dt * scheme.beta[scheme.q])

    kin = tuple(cset.kinematic_eq)
    dyn = tuple(cset.dynamic_eq)
    kin_in = tuple(cset.kinematic_ineq)
    dyn_in = tuple(cset.dynamic_ineq)
    n_eq = sum(c.n_rows for c in kin) + sum(c.n_rows for c in dyn)
    n_ineq = sum(c.n_rows for c in kin_in) + sum(c.n_rows for c in dyn_in)
    if n_eq == 0 and n_ineq == 0:
        return ReducedConstraintFunctions()

    def _dyn_parts(xihat, want_jac):
        state = ref + phi @ xihat
        vbar = step.velocity_map(state)
        paired = step.paired_state(state)
        values, jacs = [], []
        for con in dyn + dyn_in:
            values.append(np.atleast_1d(con.value(vbar, paired, t_q, nu)))
            if want_jac:
                jac = np.atleast_2d(con.jac_velocity(vbar, paired, t_q, nu)) * vbar_coeff
                if q == 0:
                    jac = jac + np.atleast_2d(con.jac_state(vbar, paired, t_q, nu))
                jacs.append(jac @ phi)
        return state, values, jacs

    def eq_value(xihat):
        xihat = np.asarray(xihat, dtype=float)
        state = ref + phi @ xihat
        parts = [np.atleast_1d(c.value(state, t_n, nu)) for c in kin]
        if dyn:
            _, dvals, _ = _dyn_parts(xihat, want_jac=False)
            parts += dvals[:len(dyn)]
        return np.concatenate(parts) if parts else np.zeros(0)

    def eq_jacobian(xihat):
        xihat = np.asarray(xihat, dtype=float)
        state = ref + phi @ xihat
        parts = [np.atleast_2d(c.jac_state(state, t_n, nu)) @ phi for c in kin]
        if dyn:
            _, _, djacs = _dyn_parts(xihat, want_jac=True)
            parts += djacs[:len(dyn)]
        return np.vstack(parts) if parts else np.zeros((0, basis.p))

    def ineq_value(xihat):
        xihat = np.asarray(xihat, dtype=float)
        state = ref + phi @ xihat
        parts = [np.atleast_1d(c.value(state, t_n, nu)) for c in kin_in]
        if dyn_in:
            _, dvals, _ = _dyn_parts(xihat, want_jac=False)
            parts += dvals[len(dyn):]
        return np.concatenate(parts) if parts else np.zeros(0)

    def ineq_jacobian(xihat):
        xihat = np.asarray(xihat, dtype=float)
        state = ref + phi @ xihat
        parts = [np.atleast_2d(c.jac_state(state, t_n, nu)) @ phi for c in kin_in]
        if dyn_in:
            _, _, djacs = _dyn_parts(xihat, want_jac=True)
            parts += djacs[len(dyn):]
        return np.vstack(parts) if parts else np.zeros((0, basis.p))

    return ReducedConstraintFunctions(
        n_eq=n_eq, eq_value=eq_value if n_eq else None,
        eq_jacobian=eq_jacobian if n_eq else None,
        n_ineq=n_ineq, ineq_value=ineq_value if n_ineq else None,
        ineq_jacobian=ineq_jacobian if n_ineq else None)


def eval_lspg_constraints(cset, basis, x_ref, model, scheme, history, xihat,
                          n, nu):
    """Stacked LSPG constraint values/Jacobians at a candidate xihat."""
    funcs = lspg_constraint_functions(cset, basis, x_ref, model, scheme,
                                      history, n, nu)
    xihat = np.asarray(xihat, dtype=float)
    eq = funcs.eq_value(xihat) if funcs.n_eq else np.zeros(0)
    eq_jac = funcs.eq_jacobian(xihat) if funcs.n_eq else np.zeros((0, basis.p))
    ineq = funcs.ineq_value(xihat) if funcs.n_ineq else np.zeros(0)
    ineq_jac = (funcs.ineq_jacobian(xihat) if funcs.n_ineq
                else np.zeros((0, basis.p)))
    return eq, eq_jac, ineq, ineq_jac
