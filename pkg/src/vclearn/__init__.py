"""Virtual-category learning for semi-supervised detection, desk scale."""

from .bench import BenchConfig
from .config import ExperimentConfig, load_config
from .training import RunResult, compare_strategies, evaluate_ap, gradcheck, train

__all__ = [
    "BenchConfig",
    "ExperimentConfig",
    "load_config",
    "RunResult",
    "compare_strategies",
    "evaluate_ap",
    "gradcheck",
    "train",
]
