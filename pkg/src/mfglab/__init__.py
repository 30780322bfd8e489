"""Mean field game solver toolkit.

Discrete-time finite-state engine (fixed point, fictitious play, online
mirror descent, exact/learned best responses, exploitability) and
continuous-time engine (FBSDE shooting, Deep Galerkin residual
minimization), with benchmark models and an experiment-runner CLI.
"""

__version__ = "0.1.0"

from .core import (FiniteMFG, MeanFieldFlow, Policy, Trajectory,
                   evaluate_policy, evolve_mean_field, exploitability,
                   sample_trajectories, sample_trajectory)
from .best_response import (QFunction, SoftPolicyParams, exact_br,
                            policy_gradient_br, q_learning_br)
from .equilibrium import (OmdState, SolverTrace, fictitious_play_solve,
                          fixed_point_solve, nash_gap, omd_solve)
from .errors import (ConfigError, DivergenceError, UnsupportedModelError,
                     ValidationError)

__all__ = [
    "FiniteMFG", "MeanFieldFlow", "Policy", "Trajectory",
    "evaluate_policy", "evolve_mean_field", "exploitability",
    "sample_trajectory", "sample_trajectories",
    "QFunction", "SoftPolicyParams", "exact_br", "q_learning_br",
    "policy_gradient_br",
    "SolverTrace", "OmdState", "fixed_point_solve", "fictitious_play_solve",
    "omd_solve", "nash_gap",
    "ConfigError", "ValidationError", "DivergenceError",
    "UnsupportedModelError",
]
