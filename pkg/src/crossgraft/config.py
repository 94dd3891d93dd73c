"""Declarative run description, its validation, and YAML round-tripping.

A config file is a flat YAML mapping mirroring ExperimentConfig fields;
`config_version` guards the schema. Command-line flags override file values
(handled in cli).
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import yaml

from .errors import ConfigurationError, UnsupportedVersionError
from .losses import LossWeights
from .networks import StackSplit

CONFIG_VERSION = 1
SCENARIO_DATASETS = ("mnist", "mnist-m", "usps", "m-digits", "fashion", "fashion-m")
DATA_ROOT_ENV = "CROSSGRAFT_DATA"

# training budgets used when total_steps is left unset: the fashion pair
# trains twice as long as the other scenarios
DEFAULT_STEPS_FASHION = 100_000
DEFAULT_STEPS = 50_000


def default_data_root() -> str:
    return os.environ.get(DATA_ROOT_ENV, "data")


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one run."""

    # scenario
    source: str = "mnist"
    target: str = "usps"
    split: StackSplit = field(default_factory=lambda: StackSplit(4, 2))
    weights: LossWeights = field(default_factory=LossWeights)

    # schedule
    batch_size: int = 64
    total_steps: int | None = None
    lr0: float = 2e-4
    decay: float = 0.95
    decay_every: int = 20_000
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    # behavior switches
    seed: int = 0
    content_constancy: bool = True
    semi_supervised_target_count: int = 0
    graft_noise_sigma: float = 0.0
    deterministic: bool = True
    debug_checks: bool = False

    # architecture (reference defaults; sizes only, the topology is fixed)
    latent_dim: int = 512
    enc_filters: tuple[int, ...] = (64, 128, 256, 512)
    enc_kernels: tuple[int, ...] = (5, 5, 3, 3)
    dec_filters: tuple[int, ...] = (512, 256, 128, 64, 32, 3)
    gen_filters: int = 64
    gen_blocks: int = 4
    disc_filters: tuple[int, ...] = (64, 128, 256, 512)
    feature_dim: int = 512

    # paths and logging
    data_root: str = field(default_factory=default_data_root)
    out_dir: str = "runs/default"
    mask_path: str | None = None
    log_every: int = 1
    checkpoint_every: int = 5000

    config_version: int = CONFIG_VERSION

    def __post_init__(self):
        if isinstance(self.split, str):
            self.split = StackSplit.parse(self.split)
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        self.enc_filters = tuple(self.enc_filters)
        self.enc_kernels = tuple(self.enc_kernels)
        self.dec_filters = tuple(self.dec_filters)
        self.disc_filters = tuple(self.disc_filters)
        if self.total_steps is None:
            self.total_steps = (
                DEFAULT_STEPS_FASHION if "fashion" in (self.source, self.target) else DEFAULT_STEPS
            )
        self.validate()

    @property
    def scenario(self) -> tuple[str, str]:
        return (self.source, self.target)

    @property
    def scenario_label(self) -> str:
        return f"{self.source}:{self.target}"

    def validate(self) -> None:
        if self.config_version != CONFIG_VERSION:
            raise UnsupportedVersionError(
                f"config_version {self.config_version} is not supported "
                f"(this build reads version {CONFIG_VERSION})"
            )
        if self.batch_size <= 0:
            raise ConfigurationError(f"batch_size must be positive, got {self.batch_size}")
        if self.total_steps <= 0:
            raise ConfigurationError(f"total_steps must be positive, got {self.total_steps}")
        if self.lr0 <= 0:
            raise ConfigurationError(f"lr0 must be positive, got {self.lr0}")
        if not (0.0 < self.decay <= 1.0):
            raise ConfigurationError(f"decay must lie in (0, 1], got {self.decay}")
        if self.decay_every <= 0:
            raise ConfigurationError(f"decay_every must be positive, got {self.decay_every}")
        if self.semi_supervised_target_count < 0:
            raise ConfigurationError("semi_supervised_target_count must be >= 0")
        if self.graft_noise_sigma < 0:
            raise ConfigurationError("graft_noise_sigma must be >= 0")
        if self.log_every <= 0 or self.checkpoint_every <= 0:
            raise ConfigurationError("log_every and checkpoint_every must be positive")

    def validate_scenario_names(self) -> None:
        """CLI-level check: scenarios are drawn from the six benchmark sets."""
        for name in (self.source, self.target):
            if name not in SCENARIO_DATASETS:
                raise ConfigurationError(
                    f"unknown scenario dataset {name!r}; expected one of {SCENARIO_DATASETS}"
                )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["split"] = self.split.label
        d["weights"] = asdict(self.weights)
        for key in ("enc_filters", "enc_kernels", "dec_filters", "disc_filters"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in cls.__dataclass_fields__.values()}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def with_overrides(self, **kwargs) -> "ExperimentConfig":
        kwargs = {k: v for k, v in kwargs.items() if v is not None}
        return replace(self, **kwargs)


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except OSError as e:
        raise ConfigurationError(f"cannot read config file {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigurationError(f"config file {path} is not valid YAML: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigurationError(f"config file {path} must hold a mapping")
    return ExperimentConfig.from_dict(raw)


def save_config(config: ExperimentConfig, path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(yaml.safe_dump(config.to_dict(), sort_keys=True))
