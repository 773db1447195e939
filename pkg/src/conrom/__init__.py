"""conrom: constrained projection-based reduced-order models.

Galerkin and LSPG reduced models whose per-step closures are constrained
optimization problems, enforcing conservation, total-variation, and energy
properties that plain projection loses.
"""

from .basis import (ReducedBasis, accumulate_snapshots, decode, encode,
                    load_basis, pod, project_snapshot_constrained,
                    resolve_reference, save_basis, singular_values)
from .config import (ConfigError, ExperimentConfig, SolverSettings,
                     build_config, parse_config)
from .constraints import (ConstraintSet, DynamicConstraint, FieldLayout,
                          KinematicConstraint, ec_value,
                          energy_conservation_constraint, rsum_constraint,
                          total_variation, tv_gradient, tvb_constraint,
                          tvb_value, tvd_constraint, tvd_value)
from .fom import (DimensionError, DiscreteStep, FullOrderModel,
                  InvalidSchemeError, LinearMultistepScheme, StateHistory,
                  StepFailureError, TrajectorySolution, continuous_residual,
                  discrete_residual, discrete_velocity, solve_fom)
from .metrics import (MetricSeries, energy_deviation_series,
                      recompute_aggregate, rsum_violation_series,
                      snapshot_field_errors, snapshot_field_tvb,
                      state_error_series, tv_violation_series,
                      tvb_violation_series)
from .models import (EnergyFunctions, ModelFixture, burgers_model,
                     diffusion_energy, diffusion_model, euler_model,
                     fixture_names, get_fixture, model_jacobian)
from .projection import (ReducedTrajectory, RomConfig, RomStepError,
                         constrained_galerkin_velocity, decode_trajectory,
                         galerkin_step, galerkin_velocity,
                         lspg_step_constrained, lspg_step_unconstrained,
                         simulate_rom)
from .solvers import (NlpProblem, NlpResult, QpResult, RootResult,
                      SolverOptions, hybrid_root, newton_solve, solve_nlp,
                      solve_qp)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
