"""Fair adaptive experiments.

Sequentially allocates treatment across participant groups by re-solving a
variance-minimization program under envy-freeness, welfare and feasibility
constraints, then reports group and overall effects with confidence
intervals.  Complete randomization, a doubly adaptive biased coin and two
oracle designs are included for comparison.
"""

__version__ = "0.1.0"

from .allocator import (
    BACKEND,
    AllocationProblem,
    AllocationVector,
    derive_welfare_box,
    grid_oracle,
    objective,
    solve,
)
from .config import ExperimentConfig, Participant, StageSchedule, validate_config
from .designs import DesignPolicy, assignment_probabilities
from .engine import InferenceReport, StageRecord, finalize_inference, run_trial
from .sim import DGP1, DGP2, DGPSpec, MonteCarloSummary, run_monte_carlo
from .stats import GroupArmStats, TrialState

__all__ = [
    "BACKEND", "AllocationProblem", "AllocationVector", "derive_welfare_box", "grid_oracle",
    "objective", "solve", "ExperimentConfig", "Participant", "StageSchedule", "validate_config",
    "DesignPolicy", "assignment_probabilities", "InferenceReport", "StageRecord",
    "finalize_inference", "run_trial", "DGP1", "DGP2", "DGPSpec", "MonteCarloSummary",
    "run_monte_carlo", "GroupArmStats", "TrialState",
]
