"""Desk-scale laboratory for singular Poisson right-hand sides and singular-dimension maps."""

from singlab.fractal_sets import (
    AffinePlacement,
    BoxUnion,
    DimensionEstimate,
    GeneralizedCantorSet,
    RatioSchedule,
    box_counting_dimension,
    cantor_for_dimension,
    cantor_grill,
    place,
)
from singlab.distance import DomainBox, NeighborhoodShell, distance, shell_sample
from singlab.rhs import (
    IntegrabilityReport,
    RhsTerm,
    SingularRhs,
    build_rhs,
    coefficient_schedule,
    eval_rhs,
    hp_check,
    lipschitz_bound,
    lp_norm_estimate,
    stein_dense_function,
)
from singlab.poisson import (
    ExponentFit,
    GridField,
    RadialSolution,
    SolveReport,
    discrete_comparison,
    fit_singularity_order,
    radial_solution,
    smoothness_probe,
    solve_poisson,
)
from singlab.singdim import (
    SdMap,
    SingularSample,
    countable_stability_check,
    dimension_of_flagged,
    sd_at_point,
    sd_map,
    singular_set_estimate,
    usc_check,
)

__version__ = "0.1.0"

__all__ = [
    "AffinePlacement",
    "BoxUnion",
    "DimensionEstimate",
    "DomainBox",
    "ExponentFit",
    "GeneralizedCantorSet",
    "GridField",
    "IntegrabilityReport",
    "NeighborhoodShell",
    "RadialSolution",
    "RatioSchedule",
    "RhsTerm",
    "SdMap",
    "SingularRhs",
    "SingularSample",
    "SolveReport",
    "box_counting_dimension",
    "build_rhs",
    "cantor_for_dimension",
    "cantor_grill",
    "coefficient_schedule",
    "countable_stability_check",
    "dimension_of_flagged",
    "discrete_comparison",
    "distance",
    "eval_rhs",
    "fit_singularity_order",
    "hp_check",
    "lipschitz_bound",
    "lp_norm_estimate",
    "place",
    "radial_solution",
    "sd_at_point",
    "sd_map",
    "shell_sample",
    "singular_set_estimate",
    "smoothness_probe",
    "solve_poisson",
    "stein_dense_function",
    "usc_check",
]
