"""Entropic and semi-discrete optimal transport maps, with stability diagnostics."""

from .entropic_maps import (
    ConditionalDistribution, HmaxEstimate, backward_map, conditional_covariance, conditional_distribution,
    estimate_hmax, forward_map, lipschitz_estimate, tilt,
)
from .exact_ot import TransportPlan, TransportSolverError, solve_discrete_w2, w2_distance
from .measures import (
    DensitySpec, DiscreteMeasure, MeasureFormatError, grid_quadrature, make_discrete, read_measure,
    two_point_measure, uniform_ball, uniform_box, write_measure,
)
from .semidiscrete import (
    BiasLedger, SemiDiscreteError, SemiDiscreteSolution, SemiDiscreteStability, bias_ledger, brenier_map,
    h_ij_estimate, semidiscrete_stability, solve_semidiscrete,
)
from .sinkhorn import EntropicPotentials, SinkhornError, SolverOptions, soft_conjugate, solve_entropic
from .stability import ChainDiagnostics, StabilityReport, chain_diagnostics, map_l2_distance, stability_report

__version__ = "0.1.0"

__all__ = [
    "BiasLedger", "ChainDiagnostics", "ConditionalDistribution", "DensitySpec", "DiscreteMeasure",
    "EntropicPotentials", "HmaxEstimate", "MeasureFormatError", "SemiDiscreteError", "SemiDiscreteSolution",
    "SemiDiscreteStability", "SinkhornError", "SolverOptions", "StabilityReport", "TransportPlan",
    "TransportSolverError", "backward_map", "bias_ledger", "brenier_map", "chain_diagnostics",
    "conditional_covariance", "conditional_distribution", "estimate_hmax", "forward_map", "grid_quadrature",
    "h_ij_estimate", "lipschitz_estimate", "make_discrete", "map_l2_distance", "read_measure",
    "semidiscrete_stability", "soft_conjugate", "solve_discrete_w2", "solve_entropic", "solve_semidiscrete",
    "stability_report", "tilt", "two_point_measure", "uniform_ball", "uniform_box", "w2_distance",
    "write_measure",
]
