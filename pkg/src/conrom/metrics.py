"""Per-step and global error metrics comparing ROM and FOM trajectories.

All series cover steps n = 1..N_T.  Global aggregates: relative state error
uses the ratio of accumulated norms, rsum violations use the root-sum-square
scaled by 1/N_T, and the remaining violation metrics use arithmetic means.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .basis import decode
from .constraints import total_variation
from .fom import DiscreteStep, StateHistory, continuous_residual
from .projection import (constrained_galerkin_velocity, decode_trajectory,
                         galerkin_velocity)


@dataclass
class MetricSeries:
    """Per-step metric values plus the kind-specific global aggregate.

    extra carries whatever the aggregate needs beyond the series itself
    (the state error aggregates norms, not per-step ratios); per_field holds
    per-field series for multi-field metrics.
    """

    kind: str
    values: np.ndarray
    aggregate: float
    per_field: Optional[dict] = None
    extra: dict = field(default_factory=dict)

    @property
    def max(self):
        return float(np.max(self.values)) if self.values.size else 0.0


def recompute_aggregate(series):
    """Aggregate recomputed from the emitted series (consistency check)."""
    n = series.values.size
    if series.kind == "state":
        num = series.extra["error_norms"]
        den = series.extra["state_norms"]
        return float(np.sqrt(np.sum(num ** 2)) / np.sqrt(np.sum(den ** 2)))
    if series.kind in ("rsum_galerkin", "rsum_lspg"):
        return float(np.sqrt(np.sum(series.values ** 2)) / n)
    return float(np.mean(series.values))


def state_error_series(fom_traj, rom_traj, basis, x_ref, nu=None):
    """Relative state error per step and the global norm-ratio aggregate."""
    decoded = decode_trajectory(rom_traj, basis, x_ref, nu)
    states = np.asarray(fom_traj.states, dtype=float)
    if states.shape != decoded.shape:
        raise ValueError("FOM and ROM trajectories have mismatched shapes "
                         f"{states.shape} vs {decoded.shape}")
    err = np.linalg.norm(states[1:] - decoded[1:], axis=1)
    ref = np.linalg.norm(states[1:], axis=1)
    series = MetricSeries("state", err / ref, 0.0,
                          extra={"error_norms": err, "state_norms": ref})
    series.aggregate = recompute_aggregate(series)
    return series


def _rsum_aggregate(values):
    return float(np.sqrt(np.sum(values ** 2)) / values.size)


def rsum_violation_series(kind, model, config, rom_traj, rows, mu):
    """||C r|| per step: the Galerkin form re-invokes the configured
    reduced velocity map at (xhat^n, t^n); the LSPG form evaluates the
    time-discrete residual at the decoded states."""
    if kind not in ("galerkin", "lspg"):
        raise ValueError(f"unknown rsum metric kind {kind!r}")
    mu = model.check_params(mu)
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    basis = config.basis
    scheme = config.scheme
    decoded = decode_trajectory(rom_traj, basis, config.x_ref, mu)
    n_steps = decoded.shape[0] - 1
    values = np.empty(n_steps)

    if kind == "galerkin":
        use_inner = (config.projection_kind == "galerkin"
                     and not config.constraint_set.is_empty)
        for n in range(1, n_steps + 1):
            t_n = scheme.time(n)
            xhat = rom_traj.coords[n]
            if use_inner:
                vhat, _ = constrained_galerkin_velocity(model, config, xhat,
                                                        t_n, mu)
            else:
                vhat = galerkin_velocity(model, config, xhat, t_n, mu)
            resid = continuous_residual(model, basis.phi @ vhat,
                                        decoded[n], t_n, mu)
            values[n - 1] = np.linalg.norm(rows @ resid)
        return MetricSeries(f"rsum_{kind}", values, _rsum_aggregate(values))

    needs_vel = any(b != 0.0 for b in scheme.beta[1:])
    history = StateHistory(scheme.k)

    def cached_velocity(state, tau):
        return model.velocity(state, tau, mu) if needs_vel else None

    history.push(decoded[0], cached_velocity(decoded[0], 0.0))
    for n in range(1, n_steps + 1):
        step = DiscreteStep(model, scheme, history, n, mu)
        values[n - 1] = np.linalg.norm(rows @ step.residual(decoded[n]))
        history.push(decoded[n], cached_velocity(decoded[n], scheme.time(n)))
    return MetricSeries(f"rsum_{kind}", values, _rsum_aggregate(values))


def tv_violation_series(rom_traj, basis, x_ref, nu=None):
    """max(0, TV(x~^n) - TV(x~^{n-1})) over the full state vector."""
    decoded = decode_trajectory(rom_traj, basis, x_ref, nu)
    tv = np.array([total_variation(row) for row in decoded])
    values = np.maximum(0.0, tv[1:] - tv[:-1])
    return MetricSeries("tv", values, float(np.mean(values)))


def tvb_violation_series(rom_traj, basis, x_ref, bounds, layout, nu=None):
    """max(0, TV(field) - b) per field; the headline series is the max over
    fields, the aggregate its mean over steps."""
    decoded = decode_trajectory(rom_traj, basis, x_ref, nu)
    slices = layout.slices()
    per_field = {}
    for name in layout.names:
        b = bounds[name] if isinstance(bounds, dict) else float(bounds)
        sl = slices[name]
        tv = np.array([total_variation(row[sl]) for row in decoded[1:]])
        per_field[name] = np.maximum(0.0, tv - b)
    values = np.max(np.column_stack([per_field[n] for n in layout.names]),
                    axis=1)
    return MetricSeries("tvb", values, float(np.mean(values)),
                        per_field=per_field)


def energy_deviation_series(rom_traj, basis, x_ref, energy_value, x0, nu=None):
    """|E(x~^n) - E(x^0)| per step with its arithmetic mean."""
    decoded = decode_trajectory(rom_traj, basis, x_ref, nu)
    e0 = float(energy_value(np.asarray(x0, dtype=float)))
    values = np.array([abs(float(energy_value(row)) - e0)
                       for row in decoded[1:]])
    return MetricSeries("de", values, float(np.mean(values)))


def snapshot_field_errors(x, x_tilde, layout):
    """Relative 2-norm errors per field plus the whole-vector total."""
    x = np.asarray(x, dtype=float)
    x_tilde = np.asarray(x_tilde, dtype=float)
    out = {}
    for name, sl in layout.slices().items():
        out[name] = float(np.linalg.norm(x[sl] - x_tilde[sl])
                          / np.linalg.norm(x[sl]))
    out["total"] = float(np.linalg.norm(x - x_tilde) / np.linalg.norm(x))
    return out


def snapshot_field_tvb(x_tilde, bounds, layout):
    """tvb violation per field for a single state vector."""
    x_tilde = np.asarray(x_tilde, dtype=float)
    out = {}
    for name, sl in layout.slices().items():
        b = bounds[name] if isinstance(bounds, dict) else float(bounds)
        out[name] = max(0.0, total_variation(x_tilde[sl]) - b)
    return out
