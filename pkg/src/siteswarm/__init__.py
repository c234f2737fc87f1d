"""siteswarm: multi-agent PPO for collaborative planar robot construction tasks.

Learned policies stage grippers near objects and targets; an analytical
inverse-kinematics controller finishes the precise pick/place moves.
"""

from .errors import (
    CapacityError,
    CheckpointError,
    ConfigError,
    NumericsError,
    ShapeError,
    SiteSwarmError,
    TapeError,
    UnreachableError,
)
from .mappo import Trainer, TrainerConfig, train
from .tasks import ConstructionEnv, RewardWeights, make_env, task_spec
from .harness import ExperimentConfig, EvalReport, evaluate, run_training

__version__ = "0.1.0"

__all__ = [
    "CapacityError",
    "CheckpointError",
    "ConfigError",
    "ConstructionEnv",
    "EvalReport",
    "ExperimentConfig",
    "NumericsError",
    "RewardWeights",
    "ShapeError",
    "SiteSwarmError",
    "TapeError",
    "Trainer",
    "TrainerConfig",
    "UnreachableError",
    "evaluate",
    "make_env",
    "run_training",
    "task_spec",
    "train",
    "__version__",
]
