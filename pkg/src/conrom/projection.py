"""Galerkin and least-squares Petrov-Galerkin reduced-order models.

Galerkin closes the reduced dynamics through a velocity map: unconstrained,
vhat = phi' f(decode(xhat)); constrained, vhat minimizes the continuous
residual norm subject to the reduced constraint forms.  LSPG minimizes the
time-discrete residual norm over the candidate reduced state, with
constraints imposed on the candidate state (kinematic) or on the discrete
velocity it implies (dynamic).

For explicit schemes the unconstrained LSPG minimizer has the closed form
of the Galerkin update, so both projections share one code path and produce
identical trajectories.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.sparse

from .basis import ReducedBasis, decode, encode, resolve_reference
from .constraints import (ConstraintSet, galerkin_constraint_functions,
                          lspg_constraint_functions)
from .fom import DiscreteStep, StateHistory
from .solvers import NlpProblem, SolverOptions, hybrid_root, solve_nlp


@dataclass(frozen=True)
class RomConfig:
    """Everything needed to run a reduced-order model except (model, mu)."""

    basis: ReducedBasis
    x_ref: object                      # vector or callable(mu) -> vector
    scheme: object                     # LinearMultistepScheme
    projection_kind: str               # "galerkin" | "lspg"
    constraint_set: ConstraintSet = field(default_factory=ConstraintSet)
    solver_options: SolverOptions = field(default_factory=SolverOptions)
    hybrid_xtol: float = 1e-6
    hybrid_maxfev: Optional[int] = None

    def __post_init__(self):
        if self.projection_kind not in ("galerkin", "lspg"):
            raise ValueError(f"unknown projection kind {self.projection_kind!r}")
        if self.constraint_set is None:
            object.__setattr__(self, "constraint_set", ConstraintSet())


@dataclass
class ReducedTrajectory:
    """Reduced coordinates over the time grid plus per-step diagnostics.

    status is "completed", or "failed@<n>: <reason>" with times/coords
    truncated to the accepted steps.
    """

    times: np.ndarray
    coords: np.ndarray
    diagnostics: list = field(default_factory=list)
    status: str = "completed"

    @property
    def completed(self):
        return self.status == "completed"

    @property
    def n_steps(self):
        return self.coords.shape[0] - 1


@dataclass
class RomHistories:
    """Reduced history (coords + reduced velocities) and, for LSPG runs,
    the decoded full-space history the discrete residual needs."""

    reduced: StateHistory
    full: Optional[StateHistory] = None


class RomStepError(RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


def decode_trajectory(traj, basis, x_ref, nu=None):
    """Decoded states of a reduced trajectory, one row per time step."""
    ref = resolve_reference(x_ref, nu)
    return ref[None, :] + traj.coords @ basis.phi.T


def galerkin_velocity(model, config, xhat, tau, nu):
    """Unconstrained reduced velocity phi' f(x_ref + phi xhat, tau; nu)."""
    state = decode(config.basis, config.x_ref, np.asarray(xhat, dtype=float), nu)
    return config.basis.phi.T @ model.velocity(state, tau, nu)


def _nlp_acceptable(result, options):
    # a stalled objective or step at a feasible point is a solution for our
    # purposes: the minimizer sits where the merit landscape goes flat
    if result.converged:
        return True
    if result.status in ("ftol_reached", "xtol_reached", "stalled"):
        return result.kkt_feasibility <= options.constraint_tol
    return False


def constrained_galerkin_velocity(model, config, xhat, tau, nu,
                                  warm_start=None):
    """Reduced velocity minimizing ||phi vhat - f||^2 under the reduced
    constraint forms; returns (vhat, NlpResult-or-None)."""
    basis = config.basis
    xhat = np.asarray(xhat, dtype=float)
    state = decode(basis, config.x_ref, xhat, nu)
    f_full = model.velocity(state, tau, nu)
    coeff = basis.phi.T @ f_full
    funcs = galerkin_constraint_functions(config.constraint_set, basis,
                                          config.x_ref, xhat, tau, nu)
    if funcs.n_eq == 0 and funcs.n_ineq == 0:
        return coeff, None

    const = 0.5 * float(f_full @ f_full)

    def objective(vhat):
        # ||phi v - f||^2/2 with phi orthonormal
        return 0.5 * float(vhat @ vhat) - float(coeff @ vhat) + const

    def gradient(vhat):
        return vhat - coeff

    problem = NlpProblem(
        dim=basis.p, objective=objective, gradient=gradient,
        n_eq=funcs.n_eq, eq_value=funcs.eq_value, eq_jacobian=funcs.eq_jacobian,
        n_ineq=funcs.n_ineq, ineq_value=funcs.ineq_value,
        ineq_jacobian=funcs.ineq_jacobian)
    warm = coeff if warm_start is None else np.asarray(warm_start, dtype=float)
    options = replace(config.solver_options, warm_start=warm, hessian_init=None)
    # every reduced constraint row is affine in vhat at frozen state, so its
    # value carries roundoff ~ eps * |row| * |vhat|; feasibility cannot be
    # resolved below that floor at large velocity scales
    row_scale = 0.0
    if funcs.n_eq:
        row_scale = max(row_scale,
                        float(np.max(np.linalg.norm(funcs.eq_jacobian(warm), axis=1))))
    if funcs.n_ineq:
        row_scale = max(row_scale,
                        float(np.max(np.linalg.norm(funcs.ineq_jacobian(warm), axis=1))))
    floor = 100.0 * np.finfo(float).eps * row_scale * (1.0 + float(np.linalg.norm(coeff)))
    if floor > options.constraint_tol:
        options = replace(options, constraint_tol=floor)
    result = solve_nlp(problem, options)
    if not _nlp_acceptable(result, options):
        raise RomStepError(
            f"constrained velocity solve failed ({result.status}, "
            f"kkt=({result.kkt_stationarity:.2e}, {result.kkt_feasibility:.2e}, "
            f"{result.kkt_complementarity:.2e}))",
            diagnostics=_nlp_diag(result))
    return result.point, result


def _nlp_diag(result):
    if result is None:
        return {}
    return {
        "nlp_iterations": result.iterations,
        "nlp_status": result.status,
        "nlp_objective": result.objective,
        "kkt_stationarity": result.kkt_stationarity,
        "kkt_feasibility": result.kkt_feasibility,
        "kkt_complementarity": result.kkt_complementarity,
        "n_active_ineq": int(np.sum(result.multipliers_ineq > 0.0)),
    }


def _explicit_reduced_update(scheme, history, n):
    """Closed-form explicit step on reduced coordinates with cached reduced
    velocities: xhat^n = (-sum_j alpha_j xhat^{n-j} + dt sum_j beta_j
    vhat^{n-j}) / alpha_0."""
    acc = -scheme.alpha[1] * history.state(1)
    if scheme.beta[1] != 0.0:
        acc = acc + scheme.dt * scheme.beta[1] * history.velocity(1)
    for j in range(2, scheme.k + 1):
        acc = acc - scheme.alpha[j] * history.state(j)
        if scheme.beta[j] != 0.0:
            acc = acc + scheme.dt * scheme.beta[j] * history.velocity(j)
    return acc / scheme.alpha[0]


def _reduced_history_sum(scheme, history):
    """what = sum_{j>=1} alpha_j xhat^{n-j} - dt beta_j vhat^{n-j}."""
    acc = scheme.alpha[1] * history.state(1)
    if scheme.beta[1] != 0.0:
        acc = acc - scheme.dt * scheme.beta[1] * history.velocity(1)
    for j in range(2, scheme.k + 1):
        acc = acc + scheme.alpha[j] * history.state(j)
        if scheme.beta[j] != 0.0:
            acc = acc - scheme.dt * scheme.beta[j] * history.velocity(j)
    return acc


def galerkin_step(model, config, histories, n, nu):
    """Advance the Galerkin ROM one step; returns (xhat_n, diagnostics)."""
    scheme = config.scheme
    history = histories.reduced
    diag = {"step": n}
    if scheme.is_explicit:
        # velocity at the previous accepted state was cached on acceptance
        xhat = _explicit_reduced_update(scheme, history, n)
        return xhat, diag

    t_n = scheme.time(n)
    what = _reduced_history_sum(scheme, history)
    coeff = scheme.dt * scheme.beta[0]
    inner = {"warm": None, "result": None}

    def residual(xi_hat):
        vhat, result = constrained_galerkin_velocity(
            model, config, xi_hat, t_n, nu, warm_start=inner["warm"])
        if result is not None:
            inner["warm"] = vhat
            inner["result"] = result
        return scheme.alpha[0] * xi_hat + what - coeff * vhat

    root = hybrid_root(residual, history.state(1), xtol=config.hybrid_xtol,
                       maxfev=config.hybrid_maxfev)
    diag.update({"root_converged": root.converged, "root_nfev": root.n_fev,
                 "root_residual_norm": root.residual_norm,
                 "root_status": root.status})
    diag.update(_nlp_diag(inner["result"]))
    if not root.converged:
        raise RomStepError(f"O-Delta-E root find failed: {root.status} "
                           f"(|r|={root.residual_norm:.3e})", diagnostics=diag)
    return root.point, diag


def _lspg_objective(model, config, step, nu):
    basis = config.basis
    ref = resolve_reference(config.x_ref, nu)
    phi = basis.phi

    def residual(xihat):
        return step.residual(ref + phi @ xihat)

    def jacobian(xihat):
        jac = step.jacobian(ref + phi @ xihat)
        if scipy.sparse.issparse(jac):
            return np.asarray(jac @ phi)
        return jac @ phi

    def objective(xihat):
        r = residual(xihat)
        return 0.5 * float(r @ r)

    def gradient(xihat):
        return jacobian(xihat).T @ residual(xihat)

    return residual, jacobian, objective, gradient


def lspg_step_unconstrained(model, config, histories, n, nu):
    """Minimize the time-discrete residual over the subspace (no constraints).

    Explicit schemes make the residual linear in the coordinates; with an
    orthonormal basis its exact minimizer is the closed-form reduced update,
    evaluated in reduced coordinates to avoid cancellation against large
    reference states. Implicit schemes run Gauss-Newton with an Armijo
    backtracking line search."""
    scheme = config.scheme
    diag = {"step": n}
    if scheme.is_explicit:
        xhat = _explicit_reduced_update(scheme, histories.reduced, n)
        return xhat, diag

    step = DiscreteStep(model, scheme, histories.full, n, nu)
    residual, jacobian, objective, gradient = _lspg_objective(
        model, config, step, nu)
    opts = config.solver_options
    xi = histories.reduced.state(1).copy()
    r = residual(xi)
    obj = 0.5 * float(r @ r)
    converged = False
    it = 0
    for it in range(1, opts.max_iter + 1):
        jac = jacobian(xi)
        grad = jac.T @ r
        # residual orthogonality relative to |J||r|, plus an absolute floor;
        # the optimal residual itself need not be small
        g_tol = opts.gtol * (1.0 + np.linalg.norm(jac) * np.linalg.norm(r))
        if np.linalg.norm(grad) <= g_tol:
            converged = True
            break
        d = np.linalg.lstsq(jac, -r, rcond=None)[0]
        slope = float(grad @ d)
        t = 1.0
        for _ in range(25):
            r_t = residual(xi + t * d)
            obj_t = 0.5 * float(r_t @ r_t)
            if obj_t <= obj + 1e-4 * t * min(slope, 0.0):
                break
            t *= 0.5
        xi = xi + t * d
        d_obj = obj - obj_t
        r, obj = r_t, obj_t
        # objective stagnation and step collapse both count as converged,
        # matching common least-squares termination semantics
        if abs(d_obj) <= opts.ftol * (1.0 + abs(obj)):
            converged = True
            break
        if np.linalg.norm(t * d, ord=np.inf) <= opts.xtol * (1.0 + np.linalg.norm(xi, ord=np.inf)):
            converged = True
            break
    diag.update({"gn_iterations": it, "gn_objective": obj,
                 "gn_grad_norm": float(np.linalg.norm(jacobian(xi).T @ r))})
    if not converged:
        raise RomStepError(
            f"LSPG Gauss-Newton failed at step {n} "
            f"(grad={diag['gn_grad_norm']:.3e})", diagnostics=diag)
    return xi, diag


def lspg_step_constrained(model, config, histories, n, nu):
    """Constrained LSPG step via the SQP solver; Gauss-Newton Hessian seed."""
    scheme = config.scheme
    step = DiscreteStep(model, scheme, histories.full, n, nu)
    residual, jacobian, objective, gradient = _lspg_objective(
        model, config, step, nu)
    funcs = lspg_constraint_functions(
        config.constraint_set, config.basis, config.x_ref, model, scheme,
        histories.full, n, nu)
    warm = histories.reduced.state(1).copy()
    jac0 = jacobian(warm)
    hess0 = jac0.T @ jac0
    problem = NlpProblem(
        dim=config.basis.p, objective=objective, gradient=gradient,
        n_eq=funcs.n_eq, eq_value=funcs.eq_value, eq_jacobian=funcs.eq_jacobian,
        n_ineq=funcs.n_ineq, ineq_value=funcs.ineq_value,
        ineq_jacobian=funcs.ineq_jacobian)
    options = replace(config.solver_options, warm_start=warm, hessian_init=hess0)
    result = solve_nlp(problem, options)
    diag = {"step": n}
    diag.update(_nlp_diag(result))
    if not _nlp_acceptable(result, options):
        raise RomStepError(
            f"constrained LSPG step {n} failed ({result.status}, "
            f"kkt=({result.kkt_stationarity:.2e}, {result.kkt_feasibility:.2e}, "
            f"{result.kkt_complementarity:.2e}))", diagnostics=diag)
    return result.point, diag


def simulate_rom(model, config, mu):
    """March the reduced model over the scheme's grid.

    Returns a ReducedTrajectory; a step failure truncates the trajectory
    and sets status to "failed@<n>: <reason>" instead of raising.
    """
    mu = model.check_params(mu)
    scheme = config.scheme
    basis = config.basis
    ref = resolve_reference(config.x_ref, mu)
    x0 = model.initial_state(mu)
    xhat0 = basis.phi.T @ (np.asarray(x0, dtype=float) - ref)

    n_steps = scheme.n_steps
    coords = np.empty((n_steps + 1, basis.p))
    coords[0] = xhat0
    times = scheme.dt * np.arange(n_steps + 1)
    diagnostics = []

    is_lspg = config.projection_kind == "lspg"
    constrained = not config.constraint_set.is_empty
    needs_past_velocity = any(b != 0.0 for b in scheme.beta[1:])

    histories = RomHistories(reduced=StateHistory(scheme.k))
    if is_lspg:
        histories.full = StateHistory(scheme.k)

    def reduced_velocity_at(xhat, tau, warm=None):
        if constrained and not is_lspg:
            vhat, _ = constrained_galerkin_velocity(model, config, xhat, tau,
                                                    mu, warm_start=warm)
            return vhat
        return galerkin_velocity(model, config, xhat, tau, mu)

    def push(xhat, tau):
        vhat = None
        if needs_past_velocity:
            vhat = reduced_velocity_at(xhat, tau)
        histories.reduced.push(xhat, vhat)
        if is_lspg:
            state = decode(basis, config.x_ref, xhat, mu)
            f_full = (model.velocity(state, tau, mu)
                      if needs_past_velocity else None)
            histories.full.push(state, f_full)

    try:
        push(xhat0, 0.0)
    except RomStepError as err:
        return ReducedTrajectory(times[:1], coords[:1],
                                 [err.diagnostics],
                                 status=f"failed@0: {err}")

    for n in range(1, n_steps + 1):
        try:
            if is_lspg and constrained:
                xhat, diag = lspg_step_constrained(model, config, histories, n, mu)
            elif is_lspg:
                xhat, diag = lspg_step_unconstrained(model, config, histories, n, mu)
            else:
                xhat, diag = galerkin_step(model, config, histories, n, mu)
            coords[n] = xhat
            diagnostics.append(diag)
            push(xhat, times[n])
        except RomStepError as err:
            diagnostics.append(err.diagnostics)
            return ReducedTrajectory(times[:n], coords[:n], diagnostics,
                                     status=f"failed@{n}: {err}")

    return ReducedTrajectory(times, coords, diagnostics)
