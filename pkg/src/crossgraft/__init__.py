"""Unsupervised domain adaptation via cross-grafted decoder stacks with
adversarial label alignment.

Subpackages/modules: datasets (ingestion + synthesis), networks (coupled
VAEs, grafting, alignment heads), losses, training (three-phase schedule),
evaluation, persistence (checkpoints), config, cli.
"""

__version__ = "0.1.0"

from .config import ExperimentConfig
from .losses import LossReport, LossWeights
from .networks import CHANNEL_ST, CHANNEL_TS, GraftChannel, StackSplit

__all__ = [
    "CHANNEL_ST",
    "CHANNEL_TS",
    "ExperimentConfig",
    "GraftChannel",
    "LossReport",
    "LossWeights",
    "StackSplit",
    "__version__",
]
