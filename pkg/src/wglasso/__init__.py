"""Weighted group lasso solvers for group-sparse source recovery.

The package bundles a spherical-head synthetic forward model, weighting
operators built from the truncated pseudoinverse of the lead field, an exact
block coordinate descent solver with discrepancy-principle parameter
selection, numerical certification of the recovery guarantees, and a batched
experiment harness reporting localization and orientation errors.
"""

from .core import (
    DipoleSource,
    GroupStructure,
    LeadField,
    ProblemInstance,
    SolveResult,
    active_groups,
    make_dipole_groups,
    scatter,
    subvector,
)
from .errors import CapacityError, ConfigError, RankError, SingularityError
from .forward import (
    HeadGeometry,
    MeasurementSet,
    build_lead_field,
    dipole_lead_columns,
    place_electrodes,
    sample_source_grid,
    simulate_measurement,
)
from .metrics import (
    EstimatedDipole,
    ExperimentConfig,
    ExperimentReport,
    depth,
    dle,
    doe,
    extract_dipoles,
    match_sources,
    run_experiment,
    theoretical_min_dle,
)
from .solver import (
    MorozovSelection,
    PursuitResult,
    SolverConfig,
    alpha_max,
    bcd_solve,
    group_update,
    kkt_residual,
    morozov_select_alpha,
    objective,
    pursuit_solve,
)
from .theory import (
    TheoremReport,
    check_disjoint_images,
    check_pairwise_independence,
    default_verification_suite,
    group_image,
    verify_disjoint_recovery,
    verify_gamma_scaling,
    verify_single_group_pursuit,
)
from .weighting import (
    WeightingOperator,
    compose_problem,
    default_truncation_rank,
    identity_weighting,
    replace_measurement,
    truncated_pseudoinverse,
)

__version__ = "0.1.0"

__all__ = [
    "CapacityError",
    "ConfigError",
    "DipoleSource",
    "EstimatedDipole",
    "ExperimentConfig",
    "ExperimentReport",
    "GroupStructure",
    "HeadGeometry",
    "LeadField",
    "MeasurementSet",
    "MorozovSelection",
    "ProblemInstance",
    "PursuitResult",
    "RankError",
    "SingularityError",
    "SolveResult",
    "SolverConfig",
    "TheoremReport",
    "WeightingOperator",
    "active_groups",
    "alpha_max",
    "bcd_solve",
    "build_lead_field",
    "check_disjoint_images",
    "check_pairwise_independence",
    "compose_problem",
    "default_truncation_rank",
    "default_verification_suite",
    "depth",
    "dipole_lead_columns",
    "dle",
    "doe",
    "extract_dipoles",
    "group_image",
    "group_update",
    "identity_weighting",
    "kkt_residual",
    "make_dipole_groups",
    "match_sources",
    "morozov_select_alpha",
    "objective",
    "place_electrodes",
    "pursuit_solve",
    "replace_measurement",
    "run_experiment",
    "sample_source_grid",
    "scatter",
    "simulate_measurement",
    "subvector",
    "theoretical_min_dle",
    "truncated_pseudoinverse",
    "verify_disjoint_recovery",
    "verify_gamma_scaling",
    "verify_single_group_pursuit",
]
