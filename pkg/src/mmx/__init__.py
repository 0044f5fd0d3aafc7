"""Optimistic multiplicative weights for constrained min-max games.

Game oracles, OMWU/OGDA/MWU dynamics, equilibrium certification, local
spectral stability analysis at fixed points, and an experiment harness.
"""

from .dynamics import DynamicsState, StopRule, Termination, Trajectory, omwu_step, run
from .equilibrium import check_kkt, duality_gap, solve_bilinear
from .games import (GameOracle, make_bilinear, make_quadratic_example, make_random_bilinear,
                    make_regularized_bilinear)
from .harness import ExperimentConfig, compare_methods, run_experiment
from .spectral import stability_verdict

__all__ = [
    "DynamicsState", "StopRule", "Termination", "Trajectory", "omwu_step", "run",
    "check_kkt", "duality_gap", "solve_bilinear",
    "GameOracle", "make_bilinear", "make_quadratic_example", "make_random_bilinear",
    "make_regularized_bilinear",
    "ExperimentConfig", "compare_methods", "run_experiment", "stability_verdict",
]
__version__ = "0.1.0"
