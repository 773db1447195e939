"""Shared heavyweight fixtures: trained bases and FOM trajectories.

Everything here is deterministic, so session scope is safe and keeps the
expensive trajectories (Euler at 600 steps, diffusion training sweep) to a
single computation each.
"""

from types import SimpleNamespace

import numpy as np
import pytest

from conrom import (accumulate_snapshots, get_fixture, pod, solve_fom,
                    total_variation)


def train_basis(fixture, scheme, p):
    trajs = [solve_fom(fixture.model, scheme, mu)
             for mu in fixture.training_set]
    refs = [fixture.model.initial_state(mu) for mu in fixture.training_set]
    return pod(accumulate_snapshots(trajs, refs), p), trajs


def training_tv_bounds(fixture, trajs, factor):
    slices = fixture.layout.slices()
    bounds = {name: 0.0 for name in fixture.layout.names}
    for traj in trajs:
        for state in traj.states[1:]:
            for name in fixture.layout.names:
                bounds[name] = max(bounds[name],
                                   total_variation(state[slices[name]]))
    return {name: factor * bounds[name] for name in bounds}


@pytest.fixture(scope="session")
def burgers():
    fix = get_fixture("burgers")
    scheme = fix.scheme()
    basis, trainers = train_basis(fix, scheme, 10)
    foms = {mu: solve_fom(fix.model, scheme, mu) for mu in fix.online_mu}
    # (1.2, 0.6) sits in the training grid; reuse its trajectory
    foms[(1.2, 0.6)] = trainers[fix.training_set.index((1.2, 0.6))]
    return SimpleNamespace(fix=fix, model=fix.model, scheme=scheme,
                           basis=basis, foms=foms, trainers=trainers)


def _euler_setup(n_steps):
    fix = get_fixture("euler")
    scheme = fix.scheme(n_steps)
    basis, trainers = train_basis(fix, scheme, 20)
    bounds = training_tv_bounds(fix, trainers, 1.2)
    mu = fix.online_mu[0]
    fom = solve_fom(fix.model, scheme, mu)
    return SimpleNamespace(fix=fix, model=fix.model, scheme=scheme,
                           basis=basis, bounds=bounds, mu=mu, fom=fom)


@pytest.fixture(scope="session")
def euler200():
    return _euler_setup(200)


@pytest.fixture(scope="session")
def euler600():
    return _euler_setup(600)


@pytest.fixture(scope="session")
def euler_snapshot():
    """Single-run basis plus an out-of-training snapshot to project."""
    fix = get_fixture("euler")
    scheme = fix.scheme(200)
    train_mu = (1.1, 1.1)
    traj = solve_fom(fix.model, scheme, train_mu)
    basis = pod(accumulate_snapshots(
        [traj], [fix.model.initial_state(train_mu)]), 20)
    target_mu = (1.6, 1.4)
    target = solve_fom(fix.model, scheme, target_mu)
    snapshot = target.states[200]
    x_ref = fix.model.initial_state(target_mu)
    slices = fix.layout.slices()
    bounds = {name: 1.5 * total_variation(snapshot[slices[name]])
              for name in fix.layout.names}
    return SimpleNamespace(fix=fix, model=fix.model, basis=basis,
                           snapshot=snapshot, x_ref=x_ref, bounds=bounds,
                           mu=target_mu)


@pytest.fixture(scope="session")
def diffusion():
    fix = get_fixture("diffusion")
    scheme = fix.scheme()
    basis, trainers = train_basis(fix, scheme, 10)
    mu = fix.online_mu[0]
    fom = solve_fom(fix.model, scheme, mu)
    return SimpleNamespace(fix=fix, model=fix.model, scheme=scheme,
                           basis=basis, mu=mu, fom=fom, trainers=trainers,
                           energy=fix.energy)


def central_jacobian(fn, x, rel_step=1e-6):
    """Central-difference Jacobian oracle for analytic-derivative checks."""
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(fn(x), dtype=float)
    jac = np.empty((f0.size, x.size))
    for j in range(x.size):
        h = rel_step * max(1.0, abs(x[j]))
        xp = x.copy()
        xm = x.copy()
        xp[j] += h
        xm[j] -= h
        jac[:, j] = (np.asarray(fn(xp), dtype=float)
                     - np.asarray(fn(xm), dtype=float)) / (2.0 * h)
    return jac
