"""Root-finding and nonlinear-programming kernels.

``newton_solve``
    Newton's method with user-supplied (dense or sparse) Jacobians.
``hybrid_root``
    Derivative-free Powell-hybrid root finder: forward-difference initial
    Jacobian, dogleg trust-region steps, Broyden rank-1 updates.
``solve_nlp``
    Sequential quadratic programming for equality/inequality-constrained
    problems: damped-BFGS Lagrangian Hessian, dual active-set QP
    subproblems, l1-merit backtracking line search, KKT-based termination.

All routines are deterministic: identical inputs produce bit-identical
outputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg


# ---------------------------------------------------------------------------
# Newton


@dataclass
class NewtonResult:
    point: np.ndarray
    converged: bool
    iterations: int
    residual_norm: float


def newton_solve(residual_fn, jacobian_fn, x0, abs_tol=1e-10, rel_tol=1e-6,
                 max_iter=25):
    """Solve residual_fn(x) = 0 by Newton's method.

    Converges when ||r|| < abs_tol or ||r|| < rel_tol * ||r(x0)||.  A
    singular Jacobian raises numpy.linalg.LinAlgError; iteration-count
    exhaustion returns converged=False with the best iterate.
    """
    x = np.array(x0, dtype=float)
    r = np.asarray(residual_fn(x), dtype=float)
    rnorm = np.linalg.norm(r)
    r0norm = rnorm
    best_x, best_norm = x.copy(), rnorm
    for it in range(max_iter):
        if rnorm < abs_tol or rnorm < rel_tol * r0norm:
            return NewtonResult(x, True, it, rnorm)
        jac = jacobian_fn(x)
        if scipy.sparse.issparse(jac):
            delta = scipy.sparse.linalg.spsolve(jac.tocsc(), -r)
        else:
            delta = np.linalg.solve(np.asarray(jac), -r)
        if not np.all(np.isfinite(delta)):
            raise np.linalg.LinAlgError("singular Jacobian in newton_solve")
        # backtrack until the residual norm decreases; a failed search means
        # the direction is useless, so report the best iterate seen
        t = 1.0
        for _ in range(30):
            x_t = x + t * delta
            r_t = np.asarray(residual_fn(x_t), dtype=float)
            n_t = np.linalg.norm(r_t)
            if n_t < (1.0 - 1e-4 * t) * rnorm:
                break
            t *= 0.5
        else:
            return NewtonResult(best_x, False, it + 1, best_norm)
        x, r, rnorm = x_t, r_t, n_t
        if rnorm < best_norm:
            best_x, best_norm = x.copy(), rnorm
    if rnorm < abs_tol or rnorm < rel_tol * r0norm:
        return NewtonResult(x, True, max_iter, rnorm)
    return NewtonResult(best_x, False, max_iter, best_norm)


# ---------------------------------------------------------------------------
# Powell hybrid root finder


@dataclass
class RootResult:
    point: np.ndarray
    converged: bool
    iterations: int
    n_fev: int
    residual_norm: float
    status: str


def _fd_jacobian(fn, x, f0, budget):
    """Forward-difference Jacobian; returns (J, n_evals) or None if over budget."""
    n = x.size
    if budget < n:
        return None, 0
    jac = np.empty((f0.size, n))
    sqrt_eps = np.sqrt(np.finfo(float).eps)
    for j in range(n):
        h = sqrt_eps * max(abs(x[j]), 1.0)
        xp = x.copy()
        xp[j] += h
        jac[:, j] = (np.asarray(fn(xp), dtype=float) - f0) / h
    return jac, n


def _dogleg(jac, f, scale, delta):
    """Step minimizing ||J s + f|| subject to ||diag(scale) s|| <= delta."""
    try:
        newton = np.linalg.solve(jac, -f)
        if not np.all(np.isfinite(newton)):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        newton = np.linalg.lstsq(jac, -f, rcond=None)[0]
    if np.linalg.norm(scale * newton) <= delta:
        return newton
    grad = jac.T @ f
    sd = -grad / scale**2
    jsd = jac @ sd
    denom = jsd @ jsd
    if denom <= 0.0:
        return newton * (delta / np.linalg.norm(scale * newton))
    gd = grad / scale
    t_star = (gd @ gd) / denom
    cauchy = t_star * sd
    cnorm = np.linalg.norm(scale * cauchy)
    if cnorm >= delta:
        return cauchy * (delta / cnorm)
    # positive root of ||D(cauchy + tau (newton - cauchy))|| = delta
    dc = scale * cauchy
    dd = scale * (newton - cauchy)
    a = dd @ dd
    b = 2.0 * (dc @ dd)
    c = dc @ dc - delta**2
    disc = max(b * b - 4.0 * a * c, 0.0)
    tau = (-b + np.sqrt(disc)) / (2.0 * a) if a > 0.0 else 0.0
    tau = min(max(tau, 0.0), 1.0)
    return cauchy + tau * (newton - cauchy)


def hybrid_root(residual_fn, x0, xtol=1e-6, maxfev=None):
    """Find a root of residual_fn without derivatives (Powell-hybrid style).

    The Jacobian is built once by forward differences, updated by Broyden
    rank-1 corrections, and rebuilt after two consecutive rejected steps.
    Convergence is declared when the trust radius falls below
    xtol * ||diag(scale) x||; exhausting maxfev (default 200 * (n + 1))
    returns the best iterate with converged=False.
    """
    x = np.array(x0, dtype=float)
    if maxfev is None:
        maxfev = 200 * (x.size + 1)
    f = np.asarray(residual_fn(x), dtype=float)
    if f.size != x.size:
        raise ValueError("hybrid_root requires a square system")
    nfev = 1
    fnorm = np.linalg.norm(f)
    if fnorm == 0.0:
        return RootResult(x, True, 0, nfev, 0.0, "root at initial point")

    jac, used = _fd_jacobian(residual_fn, x, f, maxfev - nfev)
    nfev += used
    if jac is None:
        return RootResult(x, False, 0, nfev, fnorm, "maxfev exhausted")
    scale = np.linalg.norm(jac, axis=0)
    scale[scale == 0.0] = 1.0

    xnorm = np.linalg.norm(scale * x)
    delta = 100.0 * xnorm if xnorm > 0.0 else 100.0
    ncfail = 0
    ncsuc = 0
    iterations = 0

    while nfev < maxfev:
        iterations += 1
        step = _dogleg(jac, f, scale, delta)
        pnorm = np.linalg.norm(scale * step)
        # the initial radius is only an upper bound; shrink to the first
        # actual step so the radius tracks the scale of progress
        if iterations == 1:
            delta = min(delta, pnorm)
        f_new = np.asarray(residual_fn(x + step), dtype=float)
        nfev += 1
        fnorm_new = np.linalg.norm(f_new)

        predicted = fnorm**2 - np.linalg.norm(f + jac @ step)**2
        actual = fnorm**2 - fnorm_new**2
        ratio = actual / predicted if predicted > 0.0 else 0.0

        if ratio < 0.1:
            ncsuc = 0
            ncfail += 1
            delta = 0.5 * delta
        else:
            ncfail = 0
            ncsuc += 1
            if ratio >= 0.5 or ncsuc > 1:
                delta = max(delta, 2.0 * pnorm)
            if abs(ratio - 1.0) <= 0.1:
                delta = 2.0 * pnorm

        y = f_new - f
        if pnorm > 0.0:
            # Broyden update in the scaled variables: secant condition holds
            # along diag(scale)^2 * step
            w = (scale * scale) * step
            jac = jac + np.outer(y - jac @ step, w) / pnorm**2

        if ratio >= 1e-4:
            x = x + step
            f = f_new
            fnorm = fnorm_new
            xnorm = np.linalg.norm(scale * x)

        if fnorm == 0.0:
            return RootResult(x, True, iterations, nfev, fnorm, "exact root")
        if delta <= xtol * xnorm:
            return RootResult(x, True, iterations, nfev, fnorm, "xtol satisfied")
        if 0.1 * max(0.1 * delta, pnorm) <= np.finfo(float).eps * xnorm:
            return RootResult(x, False, iterations, nfev, fnorm, "xtol too small")

        if ncfail >= 2:
            jac, used = _fd_jacobian(residual_fn, x, f, maxfev - nfev)
            nfev += used
            if jac is None:
                break
            scale = np.maximum(scale, np.linalg.norm(jac, axis=0))
            ncfail = 0

    return RootResult(x, False, iterations, nfev, fnorm, "maxfev exhausted")


# ---------------------------------------------------------------------------
# Dual active-set quadratic programming (Goldfarb-Idnani)


@dataclass
class QpResult:
    point: np.ndarray
    multipliers_eq: np.ndarray
    multipliers_ineq: np.ndarray
    status: str


def _chol_solve(chol, rhs):
    return scipy.linalg.cho_solve(chol, rhs)


def _gi_active_set(hess, grad, a_eq=None, b_eq=None, a_ineq=None, b_ineq=None,
                   tol=1e-11):
    """Dual active-set pass; see solve_qp."""
    hess = np.asarray(hess, dtype=float)
    grad = np.asarray(grad, dtype=float)
    n = grad.size
    a_eq = np.zeros((0, n)) if a_eq is None else np.atleast_2d(np.asarray(a_eq, dtype=float))
    b_eq = np.zeros(0) if b_eq is None else np.atleast_1d(np.asarray(b_eq, dtype=float))
    a_ineq = np.zeros((0, n)) if a_ineq is None else np.atleast_2d(np.asarray(a_ineq, dtype=float))
    b_ineq = np.zeros(0) if b_ineq is None else np.atleast_1d(np.asarray(b_ineq, dtype=float))
    n_eq, n_ineq = b_eq.size, b_ineq.size

    chol = None
    ridge = 0.0
    for attempt in range(4):
        try:
            chol = scipy.linalg.cho_factor(
                hess if ridge == 0.0 else hess + ridge * np.eye(n), lower=True)
            break
        except scipy.linalg.LinAlgError:
            ridge = max(ridge * 100.0, 1e-12 * max(np.trace(hess) / n, 1.0))
    if chol is None:
        raise scipy.linalg.LinAlgError("QP Hessian is not positive definite")

    d = -_chol_solve(chol, grad)
    active = []        # (kind, index, sign); sign flips equality normals
    lam = []
    scale_eq = np.linalg.norm(a_eq, axis=1) if n_eq else np.zeros(0)
    scale_in = np.linalg.norm(a_ineq, axis=1) if n_ineq else np.zeros(0)
    # residuals a@d carry roundoff from the largest point on the path, not
    # the final iterate, so feasibility tolerances grow with it
    dmax = float(np.linalg.norm(d))

    def row_tol(scale_row, target):
        return tol * max(1.0, abs(target), scale_row * (1.0 + dmax))

    def lam_full():
        le = np.zeros(n_eq)
        li = np.zeros(n_ineq)
        for (kind, idx, sign), value in zip(active, lam):
            if kind == "eq":
                le[idx] = sign * value
            else:
                li[idx] = value
        return le, li

    max_pivots = 8 * (n_eq + n_ineq) + 8
    pivots = 0
    skipped_eq = set()   # equalities dependent on the active set but satisfied
    while True:
        # next candidate: missing equalities first, then violated inequalities
        candidate = None
        active_eq = {idx for kind, idx, _ in active if kind == "eq"}
        missing = [i for i in range(n_eq) if i not in active_eq and i not in skipped_eq]
        if missing:
            resid = np.array([a_eq[i] @ d - b_eq[i] for i in missing])
            i = missing[int(np.argmax(np.abs(resid)))]
            s = a_eq[i] @ d - b_eq[i]
            sign = -1.0 if s > 0.0 else 1.0
            candidate = ("eq", i, sign, sign * a_eq[i], sign * b_eq[i],
                         row_tol(scale_eq[i], b_eq[i]))
        elif n_ineq:
            resid = a_ineq @ d - b_ineq
            tols = np.array([row_tol(scale_in[i], b_ineq[i])
                             for i in range(n_ineq)])
            worst = int(np.argmin(resid + tols))
            if resid[worst] + tols[worst] < 0.0:
                candidate = ("ineq", worst, 1.0, a_ineq[worst], b_ineq[worst],
                             tols[worst])
        if candidate is None:
            le, li = lam_full()
            return QpResult(d, le, li, "optimal")

        kind, idx, sign, normal, target, ctol = candidate
        lam_plus = 0.0
        while True:
            pivots += 1
            if pivots > max_pivots:
                le, li = lam_full()
                return QpResult(d, le, li, "stalled")
            w = _chol_solve(chol, normal)
            if active:
                n_mat = np.array([sign_a * (a_eq[i] if k == "eq" else a_ineq[i])
                                  for k, i, sign_a in active])
                binv_nt = _chol_solve(chol, n_mat.T)
                m_mat = n_mat @ binv_nt
                try:
                    r = np.linalg.solve(m_mat, n_mat @ w)
                except np.linalg.LinAlgError:
                    r = np.linalg.lstsq(m_mat, n_mat @ w, rcond=None)[0]
                z = w - binv_nt @ r
            else:
                r = np.zeros(0)
                z = w

            s = normal @ d - target
            azt = normal @ z
            # dual blocking step over active inequalities
            t1 = np.inf
            blocker = -1
            for pos, (k, _, _) in enumerate(active):
                if k == "ineq" and r[pos] > 1e-13:
                    tau = lam[pos] / r[pos]
                    if tau < t1 - 1e-15 * (1.0 + abs(t1)):
                        t1 = tau
                        blocker = pos
            t2 = -s / azt if azt > 1e-13 * (1.0 + abs(s)) else np.inf
            t = min(t1, t2)
            if not np.isfinite(t):
                if abs(s) <= ctol:
                    if kind == "eq":
                        skipped_eq.add(idx)
                    break  # dependent on active set but already satisfied
                le, li = lam_full()
                return QpResult(d, le, li, "infeasible")
            d = d + t * z
            dmax = max(dmax, float(np.linalg.norm(d)))
            for pos in range(len(lam)):
                lam[pos] -= t * r[pos]
            lam_plus += t
            if t == t2:
                active.append((kind, idx, sign))
                lam.append(lam_plus)
                break
            del active[blocker]
            del lam[blocker]


def solve_qp(hess, grad, a_eq=None, b_eq=None, a_ineq=None, b_ineq=None,
             tol=1e-11):
    """Minimize 0.5 d'Hd + g'd subject to A_eq d = b_eq and A_ineq d >= b_ineq.

    Dual active-set method: start at the unconstrained minimum, add the
    most-violated constraint, and drop blocking constraints along the dual
    steps.  H must be symmetric positive definite.  Equality constraints
    always enter the active set and may carry either sign of multiplier;
    inequality multipliers are >= 0.  The active-set pass resolves
    feasibility only to roundoff of the path it walked, so the result is
    polished by a direct solve of the KKT system on the final active set.
    """
    res = _gi_active_set(hess, grad, a_eq, b_eq, a_ineq, b_ineq, tol)
    if res.status != "optimal":
        return res

    hess = np.asarray(hess, dtype=float)
    grad = np.asarray(grad, dtype=float)
    n = grad.size
    a_eq = np.zeros((0, n)) if a_eq is None else np.atleast_2d(np.asarray(a_eq, dtype=float))
    b_eq = np.zeros(0) if b_eq is None else np.atleast_1d(np.asarray(b_eq, dtype=float))
    a_ineq = np.zeros((0, n)) if a_ineq is None else np.atleast_2d(np.asarray(a_ineq, dtype=float))
    b_ineq = np.zeros(0) if b_ineq is None else np.atleast_1d(np.asarray(b_ineq, dtype=float))
    n_eq, n_ineq = b_eq.size, b_ineq.size

    act = [i for i in range(n_ineq) if res.multipliers_ineq[i] > 0.0]
    m = n_eq + len(act)
    if m == 0:
        return res
    a_act = np.vstack([a_eq, a_ineq[act]])
    b_act = np.concatenate([b_eq, b_ineq[act]])
    kkt = np.zeros((n + m, n + m))
    kkt[:n, :n] = hess
    kkt[:n, n:] = -a_act.T
    kkt[n:, :n] = a_act
    rhs = np.concatenate([-grad, b_act])
    try:
        z = np.linalg.solve(kkt, rhs)
        z = z + np.linalg.solve(kkt, rhs - kkt @ z)
    except np.linalg.LinAlgError:
        return res
    d2 = z[:n]
    lam_eq2 = z[n:n + n_eq]
    lam_act = z[n + n_eq:]

    lam_scale = 1.0 + (np.max(np.abs(lam_act)) if lam_act.size else 0.0)
    if np.any(lam_act < -tol * lam_scale):
        return res
    inact = [i for i in range(n_ineq) if i not in set(act)]
    if inact:
        resid = a_ineq[inact] @ d2 - b_ineq[inact]
        scales = np.linalg.norm(a_ineq[inact], axis=1)
        dn = float(np.linalg.norm(d2))
        tols = tol * np.maximum(1.0, np.maximum(np.abs(b_ineq[inact]),
                                                scales * (1.0 + dn)))
        if np.any(resid < -tols):
            return res
    li = np.zeros(n_ineq)
    li[act] = np.maximum(lam_act, 0.0)
    return QpResult(d2, lam_eq2, li, "optimal")


# ---------------------------------------------------------------------------
# Sequential quadratic programming


@dataclass(frozen=True)
class NlpProblem:
    """Smooth NLP: minimize objective(x) subject to eq(x) = 0, ineq(x) >= 0.

    Jacobians are row-per-constraint.  Constraint blocks are optional; pass
    n_eq/n_ineq = 0 to omit them.
    """

    dim: int
    objective: Callable
    gradient: Callable
    n_eq: int = 0
    eq_value: Optional[Callable] = None
    eq_jacobian: Optional[Callable] = None
    n_ineq: int = 0
    ineq_value: Optional[Callable] = None
    ineq_jacobian: Optional[Callable] = None

    def __post_init__(self):
        if self.n_eq > 0 and (self.eq_value is None or self.eq_jacobian is None):
            raise ValueError("n_eq > 0 requires eq_value and eq_jacobian")
        if self.n_ineq > 0 and (self.ineq_value is None or self.ineq_jacobian is None):
            raise ValueError("n_ineq > 0 requires ineq_value and ineq_jacobian")


@dataclass
class SolverOptions:
    max_iter: int = 500
    ftol: float = 1e-10
    gtol: float = 1e-8
    xtol: float = 1e-12
    constraint_tol: float = 1e-8
    stall_tol: float = 1e-6
    warm_start: Optional[np.ndarray] = None
    hessian_init: Optional[np.ndarray] = None


@dataclass
class NlpResult:
    point: np.ndarray
    objective: float
    converged: bool
    status: str
    iterations: int
    multipliers_eq: np.ndarray
    multipliers_ineq: np.ndarray
    kkt_stationarity: float
    kkt_feasibility: float
    kkt_complementarity: float


def _eval_constraints(problem, x):
    if problem.n_eq:
        ce = np.atleast_1d(np.asarray(problem.eq_value(x), dtype=float))
        je = np.atleast_2d(np.asarray(problem.eq_jacobian(x), dtype=float))
    else:
        ce = np.zeros(0)
        je = np.zeros((0, problem.dim))
    if problem.n_ineq:
        ci = np.atleast_1d(np.asarray(problem.ineq_value(x), dtype=float))
        ji = np.atleast_2d(np.asarray(problem.ineq_jacobian(x), dtype=float))
    else:
        ci = np.zeros(0)
        ji = np.zeros((0, problem.dim))
    return ce, je, ci, ji


def _kkt_residuals(g, ce, je, ci, ji, lam_eq, lam_ineq):
    stat_vec = g.copy()
    if lam_eq.size:
        stat_vec -= je.T @ lam_eq
    if lam_ineq.size:
        stat_vec -= ji.T @ lam_ineq
    stationarity = np.max(np.abs(stat_vec)) if stat_vec.size else 0.0
    feas = 0.0
    if ce.size:
        feas = max(feas, np.max(np.abs(ce)))
    if ci.size:
        feas = max(feas, max(0.0, -np.min(ci)))
    compl = np.max(np.abs(lam_ineq * ci)) if ci.size else 0.0
    return stationarity, feas, compl


def _merit(fx, ce, ci, rho_eq, rho_ineq):
    value = fx
    if ce.size:
        value += rho_eq @ np.abs(ce)
    if ci.size:
        value += rho_ineq @ np.maximum(0.0, -ci)
    return value


def _max_violation(ce, ci):
    feas = 0.0
    if ce.size:
        feas = max(feas, float(np.max(np.abs(ce))))
    if ci.size:
        feas = max(feas, max(0.0, -float(np.min(ci))))
    return feas


def _restore_feasibility(problem, x, ce, je, ci, ji, feas, tol, qp_tol):
    """Min-norm projection onto the linearized feasible set, re-linearized.

    Piecewise-linear rows (total-variation kinks) shift their gradients
    between rounds, so each round re-linearizes; fractional steps guard
    against overshooting a kink mid-correction.
    """
    for _ in range(6):
        if feas <= 0.01 * tol:
            break
        d = None
        try:
            qp = solve_qp(np.eye(x.size), np.zeros(x.size), je, -ce, ji, -ci,
                          tol=qp_tol)
            if qp.status == "optimal":
                d = qp.point
        except scipy.linalg.LinAlgError:
            d = None
        if d is None:
            # contradictory linearization: fall back to the violated rows
            parts, rhs = [], []
            if ce.size:
                parts.append(je)
                rhs.append(-ce)
            viol = ci < 0.0 if ci.size else np.zeros(0, dtype=bool)
            if np.any(viol):
                parts.append(ji[viol])
                rhs.append(-ci[viol])
            if not parts:
                break
            d, *_ = np.linalg.lstsq(np.vstack(parts), np.concatenate(rhs),
                                    rcond=None)
        trial = None
        for t in (1.0, 0.5, 0.25):
            x_t = x + t * d
            ce_t, je_t, ci_t, ji_t = _eval_constraints(problem, x_t)
            feas_t = _max_violation(ce_t, ci_t)
            if trial is None or feas_t < trial[0]:
                trial = (feas_t, x_t, ce_t, je_t, ci_t, ji_t)
        if trial[0] >= feas:
            break
        feas, x, ce, je, ci, ji = trial
    return x, ce, je, ci, ji, feas


def solve_nlp(problem, options=None):
    """Solve an NLP by SQP with damped-BFGS Hessian and active-set QP steps.

    Terminates as converged when the KKT residuals satisfy
    stationarity <= gtol, feasibility <= constraint_tol, and scaled
    complementarity <= constraint_tol * (1 + |multipliers|).  Secondary
    exits (ftol stagnation, xtol step size, max_iter) report converged
    only if the final KKT check passes.
    """
    options = options or SolverOptions()
    x = (np.array(options.warm_start, dtype=float)
         if options.warm_start is not None else np.zeros(problem.dim))
    if x.shape != (problem.dim,):
        raise ValueError(f"warm start has shape {x.shape}, expected ({problem.dim},)")

    hess_seed = (np.array(options.hessian_init, dtype=float)
                 if options.hessian_init is not None else np.eye(problem.dim))
    hess = hess_seed.copy()
    fx = float(problem.objective(x))
    g = np.asarray(problem.gradient(x), dtype=float)
    ce, je, ci, ji = _eval_constraints(problem, x)

    rho_eq = np.zeros(problem.n_eq)
    rho_ineq = np.zeros(problem.n_ineq)
    lam_eq = np.zeros(problem.n_eq)
    lam_ineq = np.zeros(problem.n_ineq)
    status = "max_iter"
    iterations = 0
    ftol_hits = 0
    resets = 0
    stall = 0
    best = None  # lowest-objective feasible iterate seen
    floor = np.inf  # lowest feasible objective value seen
    qp_tol = min(1e-11, 0.01 * options.constraint_tol)

    for it in range(1, options.max_iter + 1):
        iterations = it
        relaxed = False
        try:
            qp = solve_qp(hess, g, je, -ce, ji, -ci, tol=qp_tol)
        except scipy.linalg.LinAlgError:
            hess = hess_seed.copy()
            qp = solve_qp(hess, g, je, -ce, ji, -ci, tol=qp_tol)
        if qp.status != "optimal":
            for tau in (0.9, 0.5, 0.1, 0.0):
                b_eq_rel = -tau * ce
                b_in_rel = -tau * ci + (1.0 - tau) * np.minimum(-ci, 0.0)
                qp = solve_qp(hess, g, je, b_eq_rel, ji, b_in_rel, tol=qp_tol)
                if qp.status == "optimal":
                    relaxed = True
                    break
            if qp.status != "optimal":
                status = "qp_infeasible"
                break

        d = qp.point
        lam_eq, lam_ineq = qp.multipliers_eq, qp.multipliers_ineq
        stat, feas, compl = _kkt_residuals(g, ce, je, ci, ji, lam_eq, lam_ineq)
        compl_tol = options.constraint_tol * (1.0 + (np.max(np.abs(lam_ineq))
                                                     if lam_ineq.size else 0.0))
        # the Lagrangian gradient cancels terms of size |g|, so its residual
        # is only meaningful relative to that scale
        stat_tol = options.gtol * (1.0 + np.max(np.abs(g)))
        if (not relaxed and stat <= stat_tol
                and feas <= options.constraint_tol and compl <= compl_tol):
            status = "converged"
            break

        # l1 merit line search with SLSQP-style penalty updates
        if problem.n_eq:
            rho_eq = np.maximum(np.abs(lam_eq), 0.5 * (rho_eq + np.abs(lam_eq)))
        if problem.n_ineq:
            rho_ineq = np.maximum(np.abs(lam_ineq), 0.5 * (rho_ineq + np.abs(lam_ineq)))
        phi0 = _merit(fx, ce, ci, rho_eq, rho_ineq)
        dphi = g @ d
        if ce.size:
            dphi -= rho_eq @ np.abs(ce)
        if ci.size:
            dphi -= rho_ineq @ np.maximum(0.0, -ci)

        # microscopic steps sit below merit-function rounding; the QP's
        # linearized model is exact at that scale, so take the full step
        tiny = (np.linalg.norm(d, ord=np.inf)
                <= 1e-7 * (1.0 + np.linalg.norm(x, ord=np.inf)))

        if not tiny and dphi >= 0.0:
            # no merit descent along the QP step: stale curvature estimate;
            # restart it a few times before giving up
            if resets < 5:
                resets += 1
                hess = hess_seed.copy()
                continue
            status = "no_descent"
            break
        resets = 0

        # at most 10 trials, fraction per trial interpolated but never below
        # 0.1, and the last trial is accepted even if the merit went up: at
        # nonsmooth constraint kinks the merit can rise along every descent
        # direction of the model, and re-linearizing at the moved point is
        # what makes progress (monotone backtracking jams in place)
        t = 1.0
        for line in range(1 if tiny else 10):
            x_t = x + t * d
            fx_t = float(problem.objective(x_t))
            ce_t, je_t, ci_t, ji_t = _eval_constraints(problem, x_t)
            phi_t = _merit(fx_t, ce_t, ci_t, rho_eq, rho_ineq)
            if tiny or phi_t - phi0 <= 0.1 * t * dphi or line == 9:
                break
            model = t * dphi
            gap = model - (phi_t - phi0)
            frac = model / (2.0 * gap) if gap < 0.0 else 0.1
            t *= min(max(frac, 0.1), 0.5)

        g_t = np.asarray(problem.gradient(x_t), dtype=float)

        step = x_t - x
        # damped BFGS on the Lagrangian gradient
        grad_l_old = g.copy()
        grad_l_new = g_t.copy()
        if problem.n_eq:
            grad_l_old -= je.T @ lam_eq
            grad_l_new -= je_t.T @ lam_eq
        if problem.n_ineq:
            grad_l_old -= ji.T @ lam_ineq
            grad_l_new -= ji_t.T @ lam_ineq
        y = grad_l_new - grad_l_old
        bs = hess @ step
        sbs = step @ bs
        sy = step @ y
        if sbs > 1e-30:
            if sy < 0.2 * sbs:
                theta = 0.8 * sbs / (sbs - sy)
                y = theta * y + (1.0 - theta) * bs
                sy = step @ y
            if sy > 1e-30:
                hess = hess - np.outer(bs, bs) / sbs + np.outer(y, y) / sy

        f_change = abs(fx_t - fx)
        step_norm = np.linalg.norm(step, ord=np.inf)
        x, fx, g, ce, je, ci, ji = x_t, fx_t, g_t, ce_t, je_t, ci_t, ji_t

        feas_now = _max_violation(ce, ci)
        if feas_now <= options.constraint_tol:
            # track the lowest-objective feasible iterate; on the resulting
            # objective plateau prefer the most feasible visit (exits below
            # return it rather than the current bounce position)
            margin = options.stall_tol * (1.0 + abs(fx))
            floor = min(floor, fx)
            if best is None or fx < best[1] - margin:
                best = (x.copy(), fx, feas_now, g.copy(), ce.copy(), je.copy(),
                        ci.copy(), ji.copy(), lam_eq.copy(), lam_ineq.copy())
                stall = 0
            else:
                if fx <= floor + margin and feas_now < best[2]:
                    best = (x.copy(), fx, feas_now, g.copy(), ce.copy(),
                            je.copy(), ci.copy(), ji.copy(), lam_eq.copy(),
                            lam_ineq.copy())
                stall += 1
            swap = best[1] <= fx + margin and best[2] < feas_now
            if f_change <= options.ftol * (1.0 + abs(fx)):
                ftol_hits += 1
                if ftol_hits >= 2:
                    status = "ftol_reached"
                    if swap:
                        x, fx, _, g, ce, je, ci, ji, lam_eq, lam_ineq = best
                    break
            else:
                ftol_hits = 0
            if step_norm <= options.xtol * (1.0 + np.linalg.norm(x, ord=np.inf)):
                status = "xtol_reached"
                if swap:
                    x, fx, _, g, ce, je, ci, ji, lam_eq, lam_ineq = best
                break
            # windowed no-progress exit: at nonsmooth minimizers the iterate
            # bounces (nonmonotone acceptance), so per-step f-changes stay
            # large; stop once 20 feasible visits in a row fail to improve
            # the best feasible objective meaningfully, and return that best
            if stall >= 20:
                x, fx, _, g, ce, je, ci, ji, lam_eq, lam_ineq = best
                status = "stalled"
                break

    # feasibility restoration: near-feasible exits carry residual violation
    # from the bounce around nonsmooth boundaries; project it out
    feas_end = _max_violation(ce, ci)
    if 0.01 * options.constraint_tol < feas_end <= 100.0 * options.constraint_tol:
        x, ce, je, ci, ji, feas_end = _restore_feasibility(
            problem, x, ce, je, ci, ji, feas_end, options.constraint_tol,
            qp_tol)
        fx = float(problem.objective(x))
        g = np.asarray(problem.gradient(x), dtype=float)

    stat, feas, compl = _kkt_residuals(g, ce, je, ci, ji, lam_eq, lam_ineq)
    compl_tol = options.constraint_tol * (1.0 + (np.max(np.abs(lam_ineq))
                                                 if lam_ineq.size else 0.0))
    stat_tol = options.gtol * (1.0 + (np.max(np.abs(g)) if g.size else 0.0))
    converged = (status == "converged"
                 or (stat <= stat_tol and feas <= options.constraint_tol
                     and compl <= compl_tol))
    return NlpResult(
        point=x, objective=fx, converged=converged, status=status,
        iterations=iterations, multipliers_eq=lam_eq, multipliers_ineq=lam_ineq,
        kkt_stationarity=stat, kkt_feasibility=feas, kkt_complementarity=compl)
