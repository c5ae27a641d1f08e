"""Command-line harness: config files, cached eigensolves, experiment runs."""

from .config import ConfigError, ExperimentConfig, load_config, validate
from .runner import ExitCode, run

__all__ = ["ConfigError", "ExperimentConfig", "ExitCode", "load_config", "run", "validate"]
