"""Long-run values of controlled ODEs under general evaluations.

Evaluations are probability measures on the half-line that weight the
running cost over time. The package computes evaluated payoffs and values,
the shift total variation that measures how regular an evaluation is, and
builds random controls that are near-optimal for all regular evaluations at
once, with a numerical certificate.
"""
from .dynamics import (ControlProblem, PureControl, Trajectory, check_assumptions, check_nonexpansive,
                       shadow_control, simulate)
from .evaluations import (Abel, Atomic, Cesaro, Evaluation, Mixture, PiecewiseDensity, Smoothed,
                          density_at, integrate, mix, shift_tv, smooth, sup_shift_tv)
from .payoff_values import (OptimizerConfig, limit_value, payoff, sliding_average, undiscounted_value,
                            value, weighted_value)
from .problems import get_problem, problem_names, rotator, toy_pollution
from .random_controls import (BehaviorControl, RandomControl, StateDistribution, approximate_limit_control,
                              concatenate, distribution_trajectory, expected_payoff, kr_distance,
                              limit_trajectory, transport_mixture)
from .synthesis import (RobustnessCertificate, SynthesisConfig, smoothing_gap, solve_phi, synthesize_robust,
                        verify_uniform)

__all__ = [
    "Abel", "Atomic", "BehaviorControl", "Cesaro", "ControlProblem", "Evaluation", "Mixture",
    "OptimizerConfig", "PiecewiseDensity", "PureControl", "RandomControl", "RobustnessCertificate",
    "Smoothed", "StateDistribution", "SynthesisConfig", "Trajectory", "approximate_limit_control",
    "check_assumptions", "check_nonexpansive", "concatenate", "density_at", "distribution_trajectory",
    "expected_payoff", "get_problem", "integrate", "kr_distance", "limit_trajectory", "limit_value", "mix",
    "payoff", "problem_names", "rotator", "shadow_control", "shift_tv", "simulate", "sliding_average",
    "smooth", "smoothing_gap", "solve_phi", "sup_shift_tv", "synthesize_robust", "toy_pollution",
    "transport_mixture", "undiscounted_value", "value", "verify_uniform", "weighted_value",
]
