"""Robust linear-quadratic mean-field-type games.

Exact Riccati solutions and viability certificates, a finite-population
Monte-Carlo simulator, exact and zero-order policy gradients, and the
receding-horizon gradient descent-ascent learners built on them.
"""

from .model import (ConfigError, LqMftgModel, PolicyProfile, StageGains, load_gains,
                    load_model, random_model, validate_model)
from .riccati import (check_viability_finite, check_viability_mf, closed_form_cost,
                      compute_population_gap, find_min_viable_gamma,
                      finite_population_covariances, finite_population_gap, solve_riccati)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "LqMftgModel",
    "PolicyProfile",
    "StageGains",
    "check_viability_finite",
    "check_viability_mf",
    "closed_form_cost",
    "compute_population_gap",
    "find_min_viable_gamma",
    "finite_population_covariances",
    "finite_population_gap",
    "load_gains",
    "load_model",
    "random_model",
    "solve_riccati",
    "validate_model",
]
