"""Experiment configuration: YAML parsing with strict schema validation.

Unknown keys are rejected with their dotted path so typos fail loudly
instead of silently running a default experiment.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import yaml

from .models import get_fixture
from .solvers import SolverOptions

_PROJECTIONS = ("galerkin", "lspg", "both")
_SCHEME_KINDS = ("backward_euler", "explicit_euler")
_FAMILIES = ("rsum", "tvd", "tvb", "ec")


class ConfigError(ValueError):
    """Configuration file problem, message prefixed with the key path."""


def _fail(path, message):
    raise ConfigError(f"{path}: {message}")


def _expect_mapping(value, path):
    if not isinstance(value, dict):
        _fail(path, f"expected a mapping, got {type(value).__name__}")
    return value


def _check_keys(mapping, allowed, path):
    unknown = sorted(set(mapping) - set(allowed))
    if unknown:
        _fail(f"{path}.{unknown[0]}" if path else unknown[0], "unknown key")


def _float(value, path):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        _fail(path, f"expected a number, got {value!r}")
    return float(value)


def _int(value, path, minimum=None):
    if isinstance(value, bool) or not isinstance(value, int):
        _fail(path, f"expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        _fail(path, f"must be >= {minimum}, got {value}")
    return value


def _mu_list(value, path, n_mu):
    if not isinstance(value, (list, tuple)) or not value:
        _fail(path, "expected a non-empty list of parameter vectors")
    out = []
    for i, item in enumerate(value):
        if not isinstance(item, (list, tuple)) or len(item) != n_mu:
            _fail(f"{path}[{i}]", f"expected {n_mu} parameter values")
        out.append(tuple(_float(v, f"{path}[{i}][{j}]")
                         for j, v in enumerate(item)))
    return tuple(out)


@dataclass
class SolverSettings:
    max_iter: int = 500
    ftol: float = 1.0e-10
    gtol: float = 1.0e-8
    xtol: float = 1.0e-12
    constraint_tol: float = 1.0e-9
    hybrid_xtol: float = 1.0e-6
    hybrid_maxfev: Optional[int] = None

    def nlp_options(self):
        return SolverOptions(max_iter=self.max_iter, ftol=self.ftol,
                             gtol=self.gtol, xtol=self.xtol,
                             constraint_tol=self.constraint_tol)


@dataclass(frozen=True)
class SnapshotStudyConfig:
    train_mu: tuple
    project_mu: tuple
    step: int
    tvb_factor: float


@dataclass
class ExperimentConfig:
    model: str
    basis_size: int
    scheme_kind: Optional[str] = None
    n_steps: Optional[int] = None
    basis_sizes: Optional[tuple] = None
    projection: str = "both"
    training_set: Optional[tuple] = None
    online_mu: Optional[tuple] = None
    constraints: dict = field(default_factory=dict)
    combinations: Optional[tuple] = None
    solver: SolverSettings = field(default_factory=SolverSettings)
    output_dir: str = ""
    seed: int = 0
    snapshot_study: Optional[SnapshotStudyConfig] = None

    def projections(self):
        return ("galerkin", "lspg") if self.projection == "both" \
            else (self.projection,)

    def combination_list(self):
        if self.combinations is not None:
            return self.combinations
        # deterministic powerset of the configured families
        families = [f for f in _FAMILIES if f in self.constraints]
        combos = [()]
        for fam in families:
            combos += [combo + (fam,) for combo in combos]
        return tuple(sorted(combos, key=lambda c: (len(c), c)))


def _parse_constraints(raw, path, fixture):
    raw = _expect_mapping(raw, path)
    _check_keys(raw, _FAMILIES, path)
    out = {}
    for fam, value in raw.items():
        fam_path = f"{path}.{fam}"
        if value is True:
            value = {}
        if value is False or value is None:
            continue
        value = _expect_mapping(value, fam_path)
        if fam == "rsum":
            _check_keys(value, ("rows",), fam_path)
            rows = value.get("rows", "default")
            if rows != "default":
                arr = np.asarray(rows, dtype=float)
                if arr.ndim != 2 or arr.shape[1] != fixture.model.dim:
                    _fail(f"{fam_path}.rows",
                          f"expected rows of width {fixture.model.dim}")
                rows = arr
            out[fam] = {"rows": rows}
        elif fam == "tvb":
            _check_keys(value, ("factor",), fam_path)
            factor = _float(value.get("factor", 1.2), f"{fam_path}.factor")
            if factor <= 0.0:
                _fail(f"{fam_path}.factor", "must be positive")
            out[fam] = {"factor": factor}
        elif fam == "ec":
            _check_keys(value, (), fam_path)
            if fixture.energy is None:
                _fail(fam_path,
                      f"model {fixture.name!r} defines no energy map")
            out[fam] = {}
        else:  # tvd
            _check_keys(value, (), fam_path)
            out[fam] = {}
    return out


def _parse_combinations(raw, path, families):
    if not isinstance(raw, (list, tuple)):
        _fail(path, "expected a list of family-name lists")
    combos = []
    for i, combo in enumerate(raw):
        if combo is None:
            combo = []
        if not isinstance(combo, (list, tuple)):
            _fail(f"{path}[{i}]", "expected a list of family names")
        names = []
        for name in combo:
            if name not in families:
                _fail(f"{path}[{i}]",
                      f"family {name!r} is not configured under constraints")
            names.append(name)
        combos.append(tuple(sorted(set(names))))
    return tuple(combos)


def _parse_solver(raw, path):
    raw = _expect_mapping(raw, path)
    settings = SolverSettings()
    allowed = ("max_iter", "ftol", "gtol", "xtol", "constraint_tol",
               "hybrid_xtol", "hybrid_maxfev")
    _check_keys(raw, allowed, path)
    for key, value in raw.items():
        if key in ("max_iter", "hybrid_maxfev"):
            setattr(settings, key, _int(value, f"{path}.{key}", minimum=1))
        else:
            val = _float(value, f"{path}.{key}")
            if val <= 0.0:
                _fail(f"{path}.{key}", "must be positive")
            setattr(settings, key, val)
    return settings


def _parse_snapshot_study(raw, path, fixture):
    raw = _expect_mapping(raw, path)
    _check_keys(raw, ("train_mu", "project_mu", "step", "tvb_factor"), path)
    for key in ("train_mu", "project_mu", "step"):
        if key not in raw:
            _fail(f"{path}.{key}", "required key missing")
    train_mu = _mu_list([raw["train_mu"]], f"{path}.train_mu",
                        fixture.model.n_mu)[0]
    project_mu = _mu_list([raw["project_mu"]], f"{path}.project_mu",
                          fixture.model.n_mu)[0]
    step = _int(raw["step"], f"{path}.step", minimum=1)
    factor = _float(raw.get("tvb_factor", 1.5), f"{path}.tvb_factor")
    if factor <= 0.0:
        _fail(f"{path}.tvb_factor", "must be positive")
    return SnapshotStudyConfig(train_mu=train_mu, project_mu=project_mu,
                               step=step, tvb_factor=factor)


def build_config(raw):
    """Validate a raw mapping and produce an ExperimentConfig."""
    raw = _expect_mapping(raw, "<config>")
    allowed = ("model", "scheme", "basis_size", "basis_sizes", "projection",
               "training_set", "online_mu", "constraints",
               "constraint_combinations", "solver", "output_dir", "seed",
               "snapshot_study")
    _check_keys(raw, allowed, "")

    if "model" not in raw:
        _fail("model", "required key missing")
    model_name = raw["model"]
    try:
        fixture = get_fixture(model_name)
    except KeyError as err:
        raise ConfigError(f"model: {err.args[0]}") from None

    if "basis_size" not in raw:
        _fail("basis_size", "required key missing")
    basis_size = _int(raw["basis_size"], "basis_size", minimum=1)

    cfg = ExperimentConfig(model=model_name, basis_size=basis_size)

    if "scheme" in raw:
        scheme = _expect_mapping(raw["scheme"], "scheme")
        _check_keys(scheme, ("kind", "n_steps"), "scheme")
        if "kind" in scheme:
            if scheme["kind"] not in _SCHEME_KINDS:
                _fail("scheme.kind", f"expected one of {_SCHEME_KINDS}")
            cfg.scheme_kind = scheme["kind"]
        if "n_steps" in scheme:
            cfg.n_steps = _int(scheme["n_steps"], "scheme.n_steps", minimum=1)

    if "basis_sizes" in raw:
        sizes = raw["basis_sizes"]
        if not isinstance(sizes, (list, tuple)) or not sizes:
            _fail("basis_sizes", "expected a non-empty list of integers")
        cfg.basis_sizes = tuple(_int(p, f"basis_sizes[{i}]", minimum=1)
                                for i, p in enumerate(sizes))

    if "projection" in raw:
        if raw["projection"] not in _PROJECTIONS:
            _fail("projection", f"expected one of {_PROJECTIONS}")
        cfg.projection = raw["projection"]

    n_mu = fixture.model.n_mu
    if "training_set" in raw:
        cfg.training_set = _mu_list(raw["training_set"], "training_set", n_mu)
    if "online_mu" in raw:
        cfg.online_mu = _mu_list(raw["online_mu"], "online_mu", n_mu)

    if "constraints" in raw:
        cfg.constraints = _parse_constraints(raw["constraints"],
                                             "constraints", fixture)
    if "constraint_combinations" in raw:
        cfg.combinations = _parse_combinations(raw["constraint_combinations"],
                                               "constraint_combinations",
                                               cfg.constraints)
    if "solver" in raw:
        cfg.solver = _parse_solver(raw["solver"], "solver")
    if "output_dir" in raw:
        if not isinstance(raw["output_dir"], str) or not raw["output_dir"]:
            _fail("output_dir", "expected a non-empty string")
        cfg.output_dir = raw["output_dir"]
    else:
        cfg.output_dir = f"out/{model_name}"
    if "seed" in raw:
        cfg.seed = _int(raw["seed"], "seed", minimum=0)
    if "snapshot_study" in raw:
        cfg.snapshot_study = _parse_snapshot_study(raw["snapshot_study"],
                                                   "snapshot_study", fixture)
    return cfg


def parse_config(path):
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except yaml.YAMLError as err:
        raise ConfigError(f"malformed config file {path}: {err}") from None
    if raw is None:
        raise ConfigError(f"empty config file {path}")
    return build_config(raw)
