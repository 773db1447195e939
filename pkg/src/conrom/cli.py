"""Experiment harness: offline training, online ROM runs, snapshot study.

Artifacts are plain text (CSV, JSON) plus the binary basis file, written so
that identical configurations reproduce identical bytes.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from types import SimpleNamespace

import numpy as np

from .basis import (ReducedBasis, accumulate_snapshots, decode, encode, pod,
                    load_basis, save_basis, singular_values,
                    project_snapshot_constrained)
from .config import ConfigError, parse_config
from .constraints import (ConstraintSet, energy_conservation_constraint,
                          rsum_constraint, total_variation, tvb_constraint,
                          tvd_constraint)
from .fom import StepFailureError, solve_fom
from .metrics import (energy_deviation_series, rsum_violation_series,
                      snapshot_field_errors, snapshot_field_tvb,
                      state_error_series, tv_violation_series,
                      tvb_violation_series)
from .models import get_fixture
from .projection import RomConfig, simulate_rom
from .solvers import SolverOptions


def _fmt(value):
    return format(float(value), ".17g")


def _write_csv(path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _scheme_for(cfg, fixture, n_steps=None):
    kind = cfg.scheme_kind or fixture.scheme_kind
    steps = n_steps if n_steps is not None else (cfg.n_steps
                                                 or fixture.default_n_steps)
    dt = fixture.final_time / steps
    from .fom import LinearMultistepScheme
    if kind == "backward_euler":
        return LinearMultistepScheme.backward_euler(dt, steps)
    return LinearMultistepScheme.explicit_euler(dt, steps)


def _combo_tag(combo):
    return "+".join(combo) if combo else "none"


def _tvb_bounds(cfg, manifest, layout):
    factor = cfg.constraints["tvb"]["factor"]
    trained = manifest.get("tvb_training_max")
    if trained is None:
        raise ConfigError("constraints.tvb: the basis manifest carries no "
                          "training total-variation data; rerun offline")
    return {name: factor * trained[name] for name in layout.names}


def build_constraint_set(fixture, cfg, combo, tvb_bounds):
    """Assemble the constraint set for one toggle combination."""
    dyn_eq, kin_ineq, dyn_ineq = [], [], []
    slices = fixture.layout.slices()
    if "rsum" in combo:
        rows = cfg.constraints["rsum"]["rows"]
        if isinstance(rows, str):
            rows = fixture.rsum_rows
        dyn_eq.append(rsum_constraint(fixture.model, rows))
    if "ec" in combo:
        energy = fixture.energy
        dyn_eq.append(energy_conservation_constraint(
            energy.gradient, energy.source, energy.hessian))
    if "tvd" in combo:
        for name in fixture.layout.names:
            dyn_ineq.append(tvd_constraint(slices[name]))
    if "tvb" in combo:
        for name in fixture.layout.names:
            kin_ineq.append(tvb_constraint(tvb_bounds[name], slices[name],
                                           label=f"tvb_{name}"))
    return ConstraintSet(dynamic_eq=tuple(dyn_eq),
                         kinematic_ineq=tuple(kin_ineq),
                         dynamic_ineq=tuple(dyn_ineq))


# ---------------------------------------------------------------------------
# offline


def run_offline(cfg, out_dir=None):
    """Solve the FOM over the training set, build and persist the basis."""
    out = out_dir or cfg.output_dir
    os.makedirs(out, exist_ok=True)
    fixture = get_fixture(cfg.model)
    model = fixture.model
    scheme = _scheme_for(cfg, fixture)
    training = cfg.training_set or fixture.training_set

    trajectories = []
    references = []
    for mu in training:
        trajectories.append(solve_fom(model, scheme, mu))
        references.append(model.initial_state(mu))
    snapshots = accumulate_snapshots(trajectories, references)

    p_max = max(cfg.basis_sizes) if cfg.basis_sizes else cfg.basis_size
    basis = pod(snapshots, p_max)
    basis_path = os.path.join(out, "basis.bin")
    save_basis(basis_path, basis)

    slices = fixture.layout.slices()
    tvb_max = {name: 0.0 for name in fixture.layout.names}
    for traj in trajectories:
        for state in traj.states[1:]:
            for name in fixture.layout.names:
                tvb_max[name] = max(tvb_max[name],
                                    total_variation(state[slices[name]]))

    manifest = {
        "model": cfg.model,
        "scheme": {"kind": cfg.scheme_kind or fixture.scheme_kind,
                   "n_steps": scheme.n_steps, "dt": scheme.dt},
        "p": basis.p,
        "n_snapshots": int(snapshots.shape[1]),
        "training_set": [list(mu) for mu in training],
        "singular_values": [float(s) for s in singular_values(snapshots)],
        "tvb_training_max": {k: float(v) for k, v in tvb_max.items()},
    }
    manifest_path = os.path.join(out, "manifest.json")
    _write_json(manifest_path, manifest)
    return {"basis": basis_path, "manifest": manifest_path}


# ---------------------------------------------------------------------------
# online


def _metric_columns(cfg, fixture):
    cols = ["eps_x"]
    if "rsum" in cfg.constraints:
        cols.append("eps_rsum")
    if "tvd" in cfg.constraints:
        cols.append("eps_tv")
    if "tvb" in cfg.constraints:
        cols.extend(f"eps_tvb_{name}" for name in fixture.layout.names)
        cols.append("eps_tvb_max")
    if "ec" in cfg.constraints:
        cols.append("eps_de")
    return cols


def _metric_table(cfg, fixture, rom_cfg, fom_traj, rom_traj, mu, tvb_bounds):
    """Aligned per-step metric columns plus the aggregate map."""
    model = fixture.model
    basis, x_ref = rom_cfg.basis, rom_cfg.x_ref
    n_rows = rom_traj.coords.shape[0] - 1
    columns, aggregates = {}, {}

    # align the FOM states with a possibly truncated (failed) ROM run
    truncated = SimpleNamespace(
        states=np.asarray(fom_traj.states)[:n_rows + 1])
    series = state_error_series(truncated, rom_traj, basis, x_ref, mu)
    columns["eps_x"] = series.values
    aggregates["eps_x"] = series.aggregate
    if "rsum" in cfg.constraints:
        rows = cfg.constraints["rsum"]["rows"]
        if isinstance(rows, str):
            rows = fixture.rsum_rows
        kind = rom_cfg.projection_kind
        series = rsum_violation_series(kind, model, rom_cfg, rom_traj, rows, mu)
        columns["eps_rsum"] = series.values
        aggregates["eps_rsum"] = series.aggregate
    if "tvd" in cfg.constraints:
        series = tv_violation_series(rom_traj, basis, x_ref, mu)
        columns["eps_tv"] = series.values
        aggregates["eps_tv"] = series.aggregate
    if "tvb" in cfg.constraints:
        series = tvb_violation_series(rom_traj, basis, x_ref, tvb_bounds,
                                      fixture.layout, mu)
        for name in fixture.layout.names:
            columns[f"eps_tvb_{name}"] = series.per_field[name]
            aggregates[f"eps_tvb_{name}"] = float(np.mean(series.per_field[name]))
        columns["eps_tvb_max"] = series.values
        aggregates["eps_tvb_max"] = series.aggregate
    if "ec" in cfg.constraints:
        energy = fixture.energy
        x0 = model.initial_state(mu)
        series = energy_deviation_series(rom_traj, basis, x_ref,
                                         energy.value, x0, mu)
        columns["eps_de"] = series.values
        aggregates["eps_de"] = series.aggregate
    return columns, aggregates


def _run_online_core(cfg, out, basis_dir):
    fixture = get_fixture(cfg.model)
    model = fixture.model
    scheme = _scheme_for(cfg, fixture)
    os.makedirs(out, exist_ok=True)

    src = basis_dir or out
    basis_full = load_basis(os.path.join(src, "basis.bin"))
    with open(os.path.join(src, "manifest.json")) as fh:
        manifest = json.load(fh)

    tvb_bounds = None
    if "tvb" in cfg.constraints:
        tvb_bounds = _tvb_bounds(cfg, manifest, fixture.layout)

    online_mu = cfg.online_mu or fixture.online_mu
    fom_trajs = {i: solve_fom(model, scheme, mu)
                 for i, mu in enumerate(online_mu)}

    p_list = cfg.basis_sizes or (cfg.basis_size,)
    metric_cols = _metric_columns(cfg, fixture)
    records = []
    failures = []
    for p in p_list:
        if p > basis_full.p:
            raise ConfigError(f"basis_size {p} exceeds stored basis rank "
                              f"{basis_full.p}")
        basis = ReducedBasis(np.ascontiguousarray(basis_full.phi[:, :p]))
        for proj in cfg.projections():
            for combo in cfg.combination_list():
                cset = build_constraint_set(fixture, cfg, combo, tvb_bounds)
                rom_cfg = RomConfig(
                    basis=basis, x_ref=model.initial_state, scheme=scheme,
                    projection_kind=proj, constraint_set=cset,
                    solver_options=cfg.solver.nlp_options(),
                    hybrid_xtol=cfg.solver.hybrid_xtol,
                    hybrid_maxfev=cfg.solver.hybrid_maxfev)
                for i, mu in enumerate(online_mu):
                    name = f"{proj}_p{p}_mu{i}_{_combo_tag(combo)}"
                    run_dir = os.path.join(out, name)
                    os.makedirs(run_dir, exist_ok=True)
                    traj = simulate_rom(model, rom_cfg, mu)
                    columns, aggregates = _metric_table(
                        cfg, fixture, rom_cfg, fom_trajs[i], traj, mu,
                        tvb_bounds)
                    n_rows = traj.coords.shape[0] - 1
                    rows = [[n, traj.times[n]] + [columns[c][n - 1]
                                                  for c in metric_cols]
                            for n in range(1, n_rows + 1)]
                    _write_csv(os.path.join(run_dir, "metrics.csv"),
                               ["step", "time"] + metric_cols, rows)
                    record = {"run": name, "model": cfg.model,
                              "projection": proj, "p": p, "mu": list(mu),
                              "combo": list(combo), "status": traj.status,
                              "n_steps": scheme.n_steps,
                              "aggregates": aggregates}
                    _write_json(os.path.join(run_dir, "run.json"), record)
                    if not traj.completed:
                        with open(os.path.join(run_dir, "FAILED"), "w") as fh:
                            fh.write(traj.status + "\n")
                        failures.append(name)
                    records.append(record)
    return records, failures


def run_online(cfg, out_dir=None, basis_dir=None):
    out = out_dir or cfg.output_dir
    return _run_online_core(cfg, out, basis_dir)


def run_sweep(cfg, out_dir=None, basis_dir=None):
    """Online runs over a list of basis sizes plus an aggregate summary."""
    if not cfg.basis_sizes:
        raise ConfigError("basis_sizes: required for sweep runs")
    out = out_dir or cfg.output_dir
    records, failures = _run_online_core(cfg, out, basis_dir)
    agg_keys = sorted({k for rec in records for k in rec["aggregates"]})
    header = ["p", "projection", "mu_index", "combo", "status"] + agg_keys
    lines = [",".join(header)]
    for rec in records:
        mu_index = rec["run"].split("_mu")[1].split("_")[0]
        cells = [str(rec["p"]), rec["projection"], mu_index,
                 _combo_tag(tuple(rec["combo"])), rec["status"].split("@")[0]]
        cells += [_fmt(rec["aggregates"].get(k, float("nan")))
                  for k in agg_keys]
        lines.append(",".join(cells))
    with open(os.path.join(out, "sweep_summary.csv"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return records, failures


# ---------------------------------------------------------------------------
# fom + snapshot study


def run_fom(cfg, out_dir=None, mu_override=None):
    out = out_dir or cfg.output_dir
    os.makedirs(out, exist_ok=True)
    fixture = get_fixture(cfg.model)
    scheme = _scheme_for(cfg, fixture)
    mu_list = (mu_override,) if mu_override is not None \
        else (cfg.online_mu or fixture.online_mu)
    paths = []
    for i, mu in enumerate(mu_list):
        traj = solve_fom(fixture.model, scheme, mu)
        header = ["time"] + [f"x{j}" for j in range(fixture.model.dim)]
        rows = [[traj.times[n]] + list(traj.states[n])
                for n in range(traj.states.shape[0])]
        path = os.path.join(out, f"fom_mu{i}.csv")
        _write_csv(path, header, rows)
        paths.append(path)
    return paths


def run_snapshot_projection_study(cfg, out_dir=None):
    """Orthogonal vs tvb-constrained projection of one solution snapshot."""
    study = cfg.snapshot_study
    if study is None:
        raise ConfigError("snapshot_study: section required for this command")
    out = out_dir or cfg.output_dir
    os.makedirs(out, exist_ok=True)
    fixture = get_fixture(cfg.model)
    model = fixture.model
    scheme = _scheme_for(cfg, fixture)
    if study.step > scheme.n_steps:
        raise ConfigError("snapshot_study.step: beyond the time grid")

    train_traj = solve_fom(model, scheme, study.train_mu)
    train_ref = model.initial_state(study.train_mu)
    basis = pod(accumulate_snapshots([train_traj], [train_ref]),
                cfg.basis_size)

    target_traj = solve_fom(model, scheme, study.project_mu)
    snapshot = target_traj.states[study.step]
    x_ref = model.initial_state(study.project_mu)

    slices = fixture.layout.slices()
    names = fixture.layout.names
    bounds = {name: study.tvb_factor * total_variation(snapshot[slices[name]])
              for name in names}

    xhat_orth = encode(basis, x_ref, snapshot)
    x_orth = decode(basis, x_ref, xhat_orth)
    xhat_con, result = project_snapshot_constrained(
        basis, x_ref, snapshot, [bounds[n] for n in names],
        [slices[n] for n in names], options=cfg.solver.nlp_options())
    x_con = decode(basis, x_ref, xhat_con)

    table = {
        "orthogonal": {"eps_x": snapshot_field_errors(snapshot, x_orth,
                                                      fixture.layout),
                       "eps_tvb": snapshot_field_tvb(x_orth, bounds,
                                                     fixture.layout)},
        "constrained": {"eps_x": snapshot_field_errors(snapshot, x_con,
                                                       fixture.layout),
                        "eps_tvb": snapshot_field_tvb(x_con, bounds,
                                                      fixture.layout)},
        "bounds": bounds,
        "solver": {"status": result.status, "converged": result.converged,
                   "iterations": result.iterations},
    }
    _write_json(os.path.join(out, "snapshot_study.json"), table)

    field_of = np.empty(model.dim, dtype=object)
    for name in fixture.layout.names:
        field_of[slices[name]] = name
    lines = ["dof,field,x_fom,x_orthogonal,x_constrained"]
    for j in range(model.dim):
        lines.append(f"{j},{field_of[j]},{_fmt(snapshot[j])},"
                     f"{_fmt(x_orth[j])},{_fmt(x_con[j])}")
    with open(os.path.join(out, "snapshot_profiles.csv"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return table


# ---------------------------------------------------------------------------
# entry point


def _parse_mu(text, n_mu):
    parts = [p for p in text.replace(",", " ").split() if p]
    if len(parts) != n_mu:
        raise ConfigError(f"--mu: expected {n_mu} values, got {len(parts)}")
    return tuple(float(p) for p in parts)


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="conrom",
        description="Constrained projection reduced-order model experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(sp):
        sp.add_argument("--config", required=True, help="YAML config path")
        sp.add_argument("--out", help="override output directory")

    sp = sub.add_parser("fom", help="solve the full-order model")
    add_common(sp)
    sp.add_argument("--mu", help="parameter vector, comma separated")

    add_common(sub.add_parser("offline", help="training runs + POD basis"))

    sp = sub.add_parser("online", help="ROM runs + metric CSVs")
    add_common(sp)
    sp.add_argument("--basis-dir", help="directory with basis.bin/manifest")

    add_common(sub.add_parser("project-snapshot",
                              help="orthogonal vs constrained projection"))

    sp = sub.add_parser("sweep", help="online runs over basis sizes")
    add_common(sp)
    sp.add_argument("--basis-dir", help="directory with basis.bin/manifest")
    sp.add_argument("--basis-sizes", help="comma separated list, "
                                          "overrides the config")

    args = parser.parse_args(argv)
    try:
        cfg = parse_config(args.config)
        if args.command == "fom":
            mu = None
            if args.mu:
                fixture = get_fixture(cfg.model)
                mu = _parse_mu(args.mu, fixture.model.n_mu)
            run_fom(cfg, out_dir=args.out, mu_override=mu)
            return 0
        if args.command == "offline":
            run_offline(cfg, out_dir=args.out)
            return 0
        if args.command == "online":
            _, failures = run_online(cfg, out_dir=args.out,
                                     basis_dir=args.basis_dir)
        elif args.command == "sweep":
            if args.basis_sizes:
                cfg.basis_sizes = tuple(
                    int(p) for p in args.basis_sizes.split(","))
            _, failures = run_sweep(cfg, out_dir=args.out,
                                    basis_dir=args.basis_dir)
        else:  # project-snapshot
            run_snapshot_projection_study(cfg, out_dir=args.out)
            return 0
        if failures:
            print(f"{len(failures)} run(s) failed: {', '.join(failures)}",
                  file=sys.stderr)
            return 2
        return 0
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 1
    except StepFailureError as err:
        print(f"FOM solve failed: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
