"""Experiment harness: configuration, seeding, records, the verification suite and the CLI."""

from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .experiment import run_coupling_experiment
from .records import CheckRecord, RunRecord
from .suite import run_verification_suite

__all__ = ["CheckRecord", "ConfigError", "ExperimentConfig", "RunRecord", "load_config",
           "parse_config", "run_coupling_experiment", "run_verification_suite"]
