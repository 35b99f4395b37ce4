"""Amortized Bayesian inference on a small numpy autodiff core.

Subpackages: ``numcore`` (tensors, optimizers, seeded streams), ``simulation``,
``networks`` and ``diagnostics``. Top-level modules hold the adapter, the
approximators, the container format, checkpoints, configs, the workflow and the CLI.
"""

from .adapter import Adapter, AdapterError
from .approximators import (
    ContinuousApproximator,
    ModelComparisonApproximator,
    PointApproximator,
    RatioApproximator,
    TrainConfig,
    likelihood_surrogate,
    log_marginal_likelihood,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, WorkflowConfig, load_config
from .workflow import BasicWorkflow

__all__ = [
    "Adapter",
    "AdapterError",
    "BasicWorkflow",
    "ConfigError",
    "ContinuousApproximator",
    "ModelComparisonApproximator",
    "PointApproximator",
    "RatioApproximator",
    "TrainConfig",
    "WorkflowConfig",
    "likelihood_surrogate",
    "load_checkpoint",
    "load_config",
    "log_marginal_likelihood",
    "save_checkpoint",
]
