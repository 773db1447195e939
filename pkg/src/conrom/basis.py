"""Proper orthogonal decomposition bases and snapshot projection.

Snapshots are stored centered about a reference state; the POD basis is
the leading left singular vectors of the snapshot matrix with a sign
convention (largest-magnitude entry of each column positive) that makes
the decomposition reproducible across platforms.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

from .fom import DimensionError
from .solvers import NlpProblem, SolverOptions, solve_nlp

_MAGIC = b"CROMBAS\x00"
_VERSION = 1


@dataclass(frozen=True)
class ReducedBasis:
    """Orthonormal column basis phi in R^{N x p}."""

    phi: np.ndarray

    def __post_init__(self):
        phi = np.asarray(self.phi, dtype=float)
        if phi.ndim != 2 or phi.shape[1] > phi.shape[0]:
            raise DimensionError(f"basis shape {phi.shape} is not tall")
        object.__setattr__(self, "phi", phi)

    @property
    def dim(self):
        return self.phi.shape[0]

    @property
    def p(self):
        return self.phi.shape[1]


def resolve_reference(x_ref, nu=None):
    """Reference states may be given as vectors or parameter-dependent maps."""
    if callable(x_ref):
        return np.asarray(x_ref(nu), dtype=float)
    return np.asarray(x_ref, dtype=float)


def accumulate_snapshots(trajectories, references):
    """Stack centered snapshots x^n - x_ref, n = 1..N_T, across training runs.

    Parameters
    ----------
    trajectories : sequence of TrajectorySolution
    references : sequence of ndarray, one reference state per run

    Returns an (N, sum of N_T) matrix.
    """
    if len(trajectories) != len(references):
        raise DimensionError("need one reference state per trajectory")
    cols = []
    for traj, ref in zip(trajectories, references):
        ref = np.asarray(ref, dtype=float)
        if traj.states.shape[1] != ref.size:
            raise DimensionError("trajectory/reference dimension mismatch")
        cols.append((traj.states[1:] - ref).T)
    return np.hstack(cols)


def _fix_column_signs(phi):
    out = phi.copy()
    for j in range(out.shape[1]):
        i = int(np.argmax(np.abs(out[:, j])))
        if out[i, j] < 0.0:
            out[:, j] = -out[:, j]
    return out


def pod(snapshots, p):
    """Rank-p POD basis of a snapshot matrix via the thin SVD.

    Requesting p beyond the numerical rank (singular values above
    1e-12 * sigma_max) raises ValueError naming the admissible maximum.
    """
    snapshots = np.asarray(snapshots, dtype=float)
    if snapshots.ndim != 2:
        raise DimensionError("snapshot matrix must be 2-D")
    u, s, _ = np.linalg.svd(snapshots, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        raise ValueError("snapshot matrix is identically zero")
    rank = int(np.sum(s > 1e-12 * s[0]))
    if not 1 <= p <= rank:
        raise ValueError(f"requested basis size {p} exceeds numerical rank {rank}")
    return ReducedBasis(_fix_column_signs(u[:, :p]))


def singular_values(snapshots):
    return np.linalg.svd(np.asarray(snapshots, dtype=float), compute_uv=False)


def encode(basis, x_ref, x, nu=None):
    """Generalized coordinates phi' (x - x_ref); the least-squares optimum."""
    ref = resolve_reference(x_ref, nu)
    x = np.asarray(x, dtype=float)
    if x.shape != (basis.dim,) or ref.shape != (basis.dim,):
        raise DimensionError("state/reference dimension does not match basis")
    return basis.phi.T @ (x - ref)


def decode(basis, x_ref, xhat, nu=None):
    """Reconstruct x_ref + phi xhat."""
    ref = resolve_reference(x_ref, nu)
    xhat = np.asarray(xhat, dtype=float)
    if xhat.shape != (basis.p,):
        raise DimensionError(f"coordinates have shape {xhat.shape}, expected ({basis.p},)")
    return ref + basis.phi @ xhat


def project_snapshot_constrained(basis, x_ref, x, bounds, field_slices,
                                 options=None):
    """Project a snapshot onto the basis subject to per-field TV bounds.

    Minimizes ||x_ref + phi xihat - x||^2 over xihat subject to
    b_f - TV(field f of the reconstruction) >= 0 for each field.  Returns
    (xihat, NlpResult).  With no bounds this reduces to encode().
    """
    from .constraints import total_variation, tv_gradient

    ref = resolve_reference(x_ref)
    x = np.asarray(x, dtype=float)
    target = x - ref
    coeff = basis.phi.T @ target
    bounds = np.atleast_1d(np.asarray(bounds, dtype=float))
    if len(field_slices) != bounds.size:
        raise DimensionError("need one TV bound per field")

    def objective(xi):
        err = basis.phi @ xi - target
        return 0.5 * float(err @ err)

    def gradient(xi):
        return xi - coeff   # columns orthonormal

    def ineq_value(xi):
        rec = ref + basis.phi @ xi
        return np.array([b - total_variation(rec[s]) for b, s in zip(bounds, field_slices)])

    def ineq_jacobian(xi):
        rec = ref + basis.phi @ xi
        rows = np.zeros((bounds.size, basis.p))
        for i, s in enumerate(field_slices):
            rows[i] = -tv_gradient(rec[s]) @ basis.phi[s]
        return rows

    problem = NlpProblem(
        dim=basis.p, objective=objective, gradient=gradient,
        n_ineq=bounds.size, ineq_value=ineq_value, ineq_jacobian=ineq_jacobian)
    options = options or SolverOptions()
    if options.warm_start is None:
        options = replace(options, warm_start=coeff)
    result = solve_nlp(problem, options)
    return result.point, result


def save_basis(path, basis):
    """Write a basis file: magic, version, N, p, column-major float64 payload."""
    phi = basis.phi
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IQQ", _VERSION, phi.shape[0], phi.shape[1]))
        fh.write(np.asfortranarray(phi).tobytes(order="F"))


def load_basis(path):
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a basis file (bad magic)")
        version, n, p = struct.unpack("<IQQ", fh.read(struct.calcsize("<IQQ")))
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported basis version {version}")
        payload = np.frombuffer(fh.read(8 * n * p), dtype="<f8")
        if payload.size != n * p:
            raise ValueError(f"{path}: truncated basis payload")
    return ReducedBasis(payload.reshape((n, p), order="F").copy())
