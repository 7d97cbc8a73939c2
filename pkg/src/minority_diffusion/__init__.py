"""Self-guided minority sampling for diffusion models on Gaussian-mixture
benchmarks: exact and learned score models, Tweedie-based uniqueness metrics,
the guided ancestral sampler, and an evaluation/reporting harness.
"""

from .config import ExperimentConfig
from .errors import (
    CheckpointError,
    ConfigError,
    NumericDegeneracyError,
    TrainingDivergenceError,
)
from .gmm import GmmSpec, benchmark
from .harness import RECIPES, RunReport, run_experiment
from .minority import (
    SQUARED_ERROR,
    DistanceSpec,
    MetricEval,
    inference_metric,
    minority_score,
    tweedie,
)
from .models import GmmScoreModel, MlpEpsModel, ScoreModel, TrainOptions, train_dsm
from .sampler import (
    GuidanceConfig,
    ancestral_step,
    guidance,
    guided_sample,
    naive_density_guidance,
    weight,
)
from .schedule import NoiseSchedule, build_schedule, perturb, respace

__all__ = [
    "CheckpointError",
    "ConfigError",
    "DistanceSpec",
    "ExperimentConfig",
    "GmmScoreModel",
    "GmmSpec",
    "GuidanceConfig",
    "MetricEval",
    "MlpEpsModel",
    "NoiseSchedule",
    "NumericDegeneracyError",
    "RECIPES",
    "RunReport",
    "SQUARED_ERROR",
    "ScoreModel",
    "TrainOptions",
    "TrainingDivergenceError",
    "ancestral_step",
    "benchmark",
    "build_schedule",
    "guidance",
    "guided_sample",
    "inference_metric",
    "minority_score",
    "naive_density_guidance",
    "perturb",
    "respace",
    "run_experiment",
    "train_dsm",
    "tweedie",
    "weight",
]
