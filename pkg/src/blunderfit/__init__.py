"""Least-squares parameter estimation with adaptive exclusion of blunders."""

__version__ = "0.1.0"

from .exclusion import (
    ExclusionConfig,
    ExclusionError,
    ExclusionOutcome,
    IterationRecord,
    run_exclusion,
    single_pass,
)
from .fitting import Dataset, FitError, FitSolution, Measurement, fit_wls, rescale_sigmas
from .stat_core import (
    inv_prob_integral,
    k_gamma_approx,
    k_gamma_exact,
    kappa_limit,
    poisson_excess_prob,
    prob_integral,
)

__all__ = [
    "Dataset",
    "ExclusionConfig",
    "ExclusionError",
    "ExclusionOutcome",
    "FitError",
    "FitSolution",
    "IterationRecord",
    "Measurement",
    "fit_wls",
    "inv_prob_integral",
    "k_gamma_approx",
    "k_gamma_exact",
    "kappa_limit",
    "poisson_excess_prob",
    "prob_integral",
    "rescale_sigmas",
    "run_exclusion",
    "single_pass",
]
