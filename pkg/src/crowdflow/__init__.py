"""Macroscopic crowd simulation by discrete push-forward of a density on a grid."""

__version__ = "0.1.0"

from .errors import (
    CflViolation,
    CrowdflowError,
    GridError,
    NonConvergence,
    NoVisibleTarget,
    ParseError,
    SupportEscape,
    ValidationError,
)
from .grid import CellVelocityField, DensityField, Grid, cell_center, make_grid, mass, measure_of, norms
from .potential import PotentialField, desired_from_potential, solve_potential
from .pushforward import (
    DiagnosticsRecord,
    OverlapStencil,
    RunResult,
    StepReport,
    check_cfl,
    clamp_boundary,
    evolve,
    overlap_stencil,
    run,
    step,
)
from .scenario import InitialDensitySpec, Scenario, bundled_scenarios, load_bundled, parse_scenario
from .oracles import ParticleCloud, exact_translation, fine_pushforward, particle_run
from .diagnostics import (
    ConvergenceRow,
    LocalizationError,
    convergence_study,
    invariant_report,
    localization_error,
    one_step_study,
)
from .velocity import (
    DesiredVelocitySpec,
    InteractionSpec,
    VelocityModel,
    desired_direct,
    desired_field,
    desired_waypoint,
    interaction_com,
    interaction_lowcrowd,
    omega,
    total_velocity,
)

