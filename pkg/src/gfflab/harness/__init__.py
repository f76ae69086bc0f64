"""Configuration, experiment runner and command line for gfflab."""
from .config import ConfigError, RunConfig, apply_env_overrides, config_hash, emit_config, parse_config, parse_config_text
from .runner import EXPERIMENTS, Check, RunManifest, StageError, gaussian_selfcheck, run

__all__ = [
    "ConfigError",
    "RunConfig",
    "parse_config",
    "parse_config_text",
    "emit_config",
    "config_hash",
    "apply_env_overrides",
    "EXPERIMENTS",
    "Check",
    "RunManifest",
    "StageError",
    "gaussian_selfcheck",
    "run",
]
