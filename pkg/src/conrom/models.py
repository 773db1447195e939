"""Benchmark full-order models: 1D Burgers, 1D Euler, 2D nonlinear diffusion.

Each factory returns a FullOrderModel with an analytic velocity Jacobian.
ModelFixture bundles a model with its time grid, training set, field layout,
and constraint defaults so the harness and tests share one registry.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse

from .constraints import FieldLayout
from .fom import FullOrderModel, LinearMultistepScheme


def model_jacobian(model, x, tau, nu):
    """Velocity Jacobian d f / d x at (x, tau; nu)."""
    return model.velocity_jacobian(np.asarray(x, dtype=float), tau,
                                   model.check_params(nu))


# ---------------------------------------------------------------------------
# 1D inviscid Burgers, finite volumes with upwind flux


def burgers_model(n_cells=200, length=100.0):
    """Source-free Burgers flow on [0, length] with an inflow Dirichlet
    boundary; mu = (frequency, amplitude) of the cosine initial condition."""
    dz = length / n_cells
    centers = (np.arange(n_cells) + 0.5) * dz

    def initial_state(mu):
        mu1, mu2 = mu
        return mu2 * np.cos(2.0 * np.pi * mu1 * centers / 100.0) + (mu2 + 1.0)

    def velocity(x, t, mu):
        # upwind is valid since the state stays positive for mu2 > 0
        ub = 2.0 * mu[1] + 1.0
        flux = 0.5 * x * x
        out = np.empty_like(x)
        out[0] = -(flux[0] - 0.5 * ub * ub) / dz
        out[1:] = -(flux[1:] - flux[:-1]) / dz
        return out

    def velocity_jacobian(x, t, mu):
        jac = np.diag(-x / dz)
        idx = np.arange(1, x.size)
        jac[idx, idx - 1] = x[:-1] / dz
        return jac

    return FullOrderModel(dim=n_cells, n_mu=2, velocity=velocity,
                          velocity_jacobian=velocity_jacobian,
                          initial_state=initial_state)


# ---------------------------------------------------------------------------
# 1D Euler equations in primitive-like variables (u, p, v), backward
# differences on a uniform node grid; node 0 carries the Dirichlet data and
# is not a degree of freedom.


def euler_model(n_nodes=100, length=1.25):
    """Supersonic ideal-gas tube flow; mu = (initial density, inlet ratio)."""
    dz = length / n_nodes
    gamma = 1.4
    u0, p0 = 400.0, 101000.0
    m = n_nodes

    def _boundary(mu):
        mu1, mu2 = mu
        return u0, p0 * mu2, 1.0 / (mu1 * mu2)

    def _backward(q, qb):
        dq = np.empty_like(q)
        dq[0] = (q[0] - qb) / dz
        dq[1:] = (q[1:] - q[:-1]) / dz
        return dq

    def initial_state(mu):
        mu1 = mu[0]
        return np.concatenate([np.full(m, u0), np.full(m, p0),
                               np.full(m, 1.0 / mu1)])

    def velocity(x, t, mu):
        u, p, v = x[:m], x[m:2 * m], x[2 * m:]
        ub, pb, vb = _boundary(mu)
        du = _backward(u, ub)
        dp = _backward(p, pb)
        dv = _backward(v, vb)
        return np.concatenate([-u * du - v * dp,
                               -u * dp - gamma * p * du,
                               -u * dv + v * du])

    # difference operator; the boundary value is constant so it does not
    # contribute to the Jacobian
    diff_op = (np.eye(m) - np.eye(m, k=-1)) / dz

    def velocity_jacobian(x, t, mu):
        u, p, v = x[:m], x[m:2 * m], x[2 * m:]
        ub, pb, vb = _boundary(mu)
        du = _backward(u, ub)
        dp = _backward(p, pb)
        dv = _backward(v, vb)
        j_uu = -np.diag(du) - u[:, None] * diff_op
        j_up = -v[:, None] * diff_op
        j_uv = -np.diag(dp)
        j_pu = -np.diag(dp) - gamma * p[:, None] * diff_op
        j_pp = -u[:, None] * diff_op - gamma * np.diag(du)
        j_pv = np.zeros((m, m))
        j_vu = -np.diag(dv) + v[:, None] * diff_op
        j_vp = np.zeros((m, m))
        j_vv = -u[:, None] * diff_op + np.diag(du)
        return np.block([[j_uu, j_up, j_uv],
                         [j_pu, j_pp, j_pv],
                         [j_vu, j_vp, j_vv]])

    return FullOrderModel(dim=3 * m, n_mu=2, velocity=velocity,
                          velocity_jacobian=velocity_jacobian,
                          initial_state=initial_state)


# ---------------------------------------------------------------------------
# 2D nonlinear diffusion with moving point sources and adiabatic boundaries.
# Conservative face-flux form: boundary faces carry zero flux, so the
# source-free divergence sums to zero exactly.


DIFFUSION_RHO_C = 4.0e6  # rho * c = 8000 * 500


def _nearest_node(pos, h, n_axis):
    if pos < 0.0 or pos > (n_axis - 1) * h:
        warnings.warn(f"source position {pos:g} clamped to the domain",
                      RuntimeWarning)
        pos = min(max(pos, 0.0), (n_axis - 1) * h)
    return int(round(pos / h))


def diffusion_model(nodes_per_axis=33, length=1.0):
    """Nonlinear heat conduction, lambda(theta) = theta - 250; mu =
    (strength 1, strength 2, frequency, amplitude) of two sources moving
    in y at z = 0.2 and z = 0.5."""
    m = nodes_per_axis
    n = m * m
    h = length / (m - 1)
    scale = 1.0 / (h * h * DIFFUSION_RHO_C)

    def initial_state(mu):
        return np.full(n, 300.0)

    def _source_terms(t, mu):
        mu1, mu2, mu3, mu4 = mu
        swing = mu4 * np.sin(2.0 * np.pi * mu3 * t)
        entries = []
        for strength, y_pos, z_pos in ((mu1, 0.5 + swing, 0.2),
                                       (mu2, 0.5 - swing, 0.5)):
            iy = _nearest_node(y_pos, h, m)
            iz = _nearest_node(z_pos, h, m)
            entries.append((iy * m + iz, strength))
        return entries

    def velocity(x, t, mu):
        th = x.reshape(m, m)
        lam = th - 250.0
        # face fluxes along y (axis 0) and z (axis 1); arithmetic-mean
        # conductivity at faces
        gy = 0.5 * (lam[:-1, :] + lam[1:, :]) * (th[1:, :] - th[:-1, :])
        gz = 0.5 * (lam[:, :-1] + lam[:, 1:]) * (th[:, 1:] - th[:, :-1])
        div = np.zeros((m, m))
        div[:-1, :] += gy
        div[1:, :] -= gy
        div[:, :-1] += gz
        div[:, 1:] -= gz
        out = div.ravel() * scale
        # strengths are area densities [W/m^2]; nodal heating rate is s/(rho c)
        for node, strength in _source_terms(t, mu):
            out[node] += strength / DIFFUSION_RHO_C
        return out

    # flat index helpers for vectorized sparse assembly
    grid = np.arange(n).reshape(m, m)
    faces_y = (grid[:-1, :].ravel(), grid[1:, :].ravel())
    faces_z = (grid[:, :-1].ravel(), grid[:, 1:].ravel())

    def velocity_jacobian(x, t, mu):
        lam = x - 250.0
        rows, cols, vals = [], [], []
        for a, b in (faces_y, faces_z):
            delta = x[b] - x[a]
            lam_face = 0.5 * (lam[a] + lam[b])
            dg_da = 0.5 * delta - lam_face
            dg_db = 0.5 * delta + lam_face
            rows.append(np.concatenate([a, a, b, b]))
            cols.append(np.concatenate([a, b, a, b]))
            vals.append(np.concatenate([dg_da, dg_db, -dg_da, -dg_db]))
        jac = scipy.sparse.coo_matrix(
            (np.concatenate(vals) * scale,
             (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
        return jac.tocsr()

    return FullOrderModel(dim=n, n_mu=4, velocity=velocity,
                          velocity_jacobian=velocity_jacobian,
                          initial_state=initial_state)


@dataclass(frozen=True)
class EnergyFunctions:
    """Scalar energy, its state gradient, and the intake rate S(t; mu)."""

    value: Callable
    gradient: Callable
    source: Callable
    hessian: Optional[Callable] = None


def diffusion_energy(nodes_per_axis=33, length=1.0):
    """Global thermal energy E(x) = alpha rho c 1'x with alpha = 1/N, and
    the discrete energy intake rate S(t; mu) = alpha (mu1 + mu2)."""
    n = nodes_per_axis * nodes_per_axis
    alpha = 1.0 / n
    coeff = alpha * DIFFUSION_RHO_C
    grad = np.full(n, coeff)

    def value(x):
        return coeff * float(np.sum(x))

    def gradient(x):
        return grad

    def source(t, mu):
        # dE/dt along the model: alpha rho c 1'xdot = alpha (s1 + s2)
        return alpha * (mu[0] + mu[1])

    return EnergyFunctions(value=value, gradient=gradient, source=source)


# ---------------------------------------------------------------------------
# Fixture registry


@dataclass(frozen=True)
class ModelFixture:
    """A model plus the experiment defaults that go with it."""

    name: str
    model: FullOrderModel
    layout: FieldLayout
    scheme_kind: str            # "backward_euler" | "explicit_euler"
    final_time: float
    default_n_steps: int
    training_set: tuple
    online_mu: tuple            # tuple of parameter tuples
    rsum_rows: np.ndarray
    energy: Optional[EnergyFunctions] = None

    def scheme(self, n_steps=None):
        n_steps = self.default_n_steps if n_steps is None else int(n_steps)
        dt = self.final_time / n_steps
        if self.scheme_kind == "backward_euler":
            return LinearMultistepScheme.backward_euler(dt, n_steps)
        if self.scheme_kind == "explicit_euler":
            return LinearMultistepScheme.explicit_euler(dt, n_steps)
        raise ValueError(f"unknown scheme kind {self.scheme_kind!r}")


def _grid(*axes):
    out = [()]
    for axis in axes:
        out = [prev + (val,) for prev in out for val in axis]
    return tuple(out)


def burgers_fixture(n_cells=200):
    model = burgers_model(n_cells=n_cells)
    return ModelFixture(
        name="burgers", model=model,
        layout=FieldLayout.single("u", model.dim),
        scheme_kind="backward_euler", final_time=30.0, default_n_steps=150,
        training_set=_grid((0.8, 1.2), (0.2, 0.6)),
        online_mu=((0.9, 0.3), (1.3, 0.7)),
        rsum_rows=np.ones((1, model.dim)))


def euler_fixture(n_nodes=100):
    model = euler_model(n_nodes=n_nodes)
    return ModelFixture(
        name="euler", model=model,
        layout=FieldLayout.blocks(("u", "p", "v"), n_nodes),
        scheme_kind="explicit_euler", final_time=1.0e-3, default_n_steps=200,
        training_set=_grid((1.1, 1.6), (1.1, 1.4)),
        online_mu=((1.25, 1.5),),
        rsum_rows=np.ones((1, model.dim)))


def diffusion_rsum_rows(n=1089, overlap=100):
    """Two overlapping partial-sum rows covering the domain."""
    split = (n - overlap) // 2
    rows = np.zeros((2, n))
    rows[0, :split + overlap] = 1.0
    rows[1, split:] = 1.0
    return rows


def diffusion_fixture(nodes_per_axis=33):
    model = diffusion_model(nodes_per_axis=nodes_per_axis)
    strength_pairs = ((-1.1e6, 0.9e6), (-1.0e6, 1.0e6))
    training = tuple(pair + (m3, m4)
                     for pair in strength_pairs
                     for m3 in (5.0e-5, 15.0e-5)
                     for m4 in (0.1, 0.3))
    return ModelFixture(
        name="diffusion", model=model,
        layout=FieldLayout.single("theta", model.dim),
        scheme_kind="backward_euler", final_time=1.0e4, default_n_steps=100,
        training_set=training,
        online_mu=((-1.0e6, 1.0e6, 1.0e-4, 0.2),),
        rsum_rows=diffusion_rsum_rows(model.dim),
        energy=diffusion_energy(nodes_per_axis=nodes_per_axis))


_FIXTURES = {"burgers": burgers_fixture, "euler": euler_fixture,
             "diffusion": diffusion_fixture}


def fixture_names():
    return tuple(sorted(_FIXTURES))


def get_fixture(name, **kwargs):
    try:
        factory = _FIXTURES[name]
    except KeyError:
        raise KeyError(f"unknown model {name!r}; "
                       f"expected one of {sorted(_FIXTURES)}") from None
    return factory(**kwargs)
