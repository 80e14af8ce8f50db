"""
Configuration loader module for the transient queueing toolkit.

This module handles loading numerical defaults from YAML files and resolving
the worker-thread count from the environment.
"""

import copy
import logging
import os
from typing import Dict, Any, Optional

import yaml
from dotenv import load_dotenv

# Configure logging
logger = logging.getLogger(__name__)

DEFAULT_CONFIG_PATH = "config.yaml"

# Environment variable used when --threads is not given
THREADS_ENV_VAR = "TQ_THREADS"

DEFAULT_CONFIG: Dict[str, Any] = {
    "tolerances": {
        "pmf_sum": 1e-7,
        "identity": 1e-8,
        "truncation": 1e-9,
    },
    "truncation": {
        "top": 80,
        "extension": 10,
    },
    "inversion": {
        "precision_digits": 10,
    },
    "simulation": {
        "replications": 100000,
        "seed": 12345,
        "dt": 0.01,
    },
    "output": {
        "format": "csv",
    },
}

# Required configuration keys
REQUIRED_CONFIG_KEYS = [
    "tolerances.pmf_sum",
    "tolerances.identity",
    "tolerances.truncation",
    "truncation.top",
    "truncation.extension",
    "inversion.precision_digits",
]


def load_config(config_path: Optional[str] = None) -> Dict[str, Any]:
    """
    Load configuration from a YAML file, layered over the built-in defaults.

    Args:
        config_path: Path to the YAML configuration file. If None, the default
                     path is tried and the built-in defaults are used when it
                     does not exist.

    Returns:
        Dict containing the configuration.

    Raises:
        FileNotFoundError: If an explicitly named configuration file does not exist.
        yaml.YAMLError: If the configuration file is not valid YAML.
        ValueError: If required configuration keys are missing or malformed.
    """
    config = copy.deepcopy(DEFAULT_CONFIG)

    if config_path is None:
        if not os.path.exists(DEFAULT_CONFIG_PATH):
            logger.debug("No configuration file found, using built-in defaults")
            return config
        config_path = DEFAULT_CONFIG_PATH

    try:
        with open(config_path, 'r') as f:
            loaded = yaml.safe_load(f) or {}

        if not isinstance(loaded, dict):
            raise ValueError(f"Configuration file {config_path} must contain a mapping")

        _merge(config, loaded)
        _validate_config(config)

        return config
    except FileNotFoundError:
        logger.error(f"Configuration file not found: {config_path}")
        raise
    except yaml.YAMLError as e:
        logger.error(f"Error parsing YAML configuration: {e}")
        raise


def _merge(base: Dict[str, Any], override: Dict[str, Any]) -> None:
    """Recursively merge override into base in place."""
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _merge(base[key], value)
        else:
            base[key] = value


def _validate_config(config: Dict[str, Any]) -> None:
    """
    Validate that the configuration contains all required keys with positive values.

    Args:
        config: Configuration dictionary.

    Raises:
        ValueError: If required configuration keys are missing.
    """
    missing_keys = []
    bad_keys = []

    for key_path in REQUIRED_CONFIG_KEYS:
        value = get_nested_config(config, key_path)
        if value is None:
            missing_keys.append(key_path)
        elif not isinstance(value, (int, float)) or value <= 0:
            bad_keys.append(key_path)

    if missing_keys:
        error_msg = f"Missing required configuration keys: {', '.join(missing_keys)}"
        logger.error(error_msg)
        raise ValueError(error_msg)

    if bad_keys:
        error_msg = f"Configuration keys must be positive numbers: {', '.join(bad_keys)}"
        logger.error(error_msg)
        raise ValueError(error_msg)


def resolve_threads(cli_value: Optional[int] = None) -> int:
    """
    Resolve the number of worker threads.

    The command-line value wins; otherwise TQ_THREADS (possibly from a .env
    file) is used; otherwise the number of available cores.

    Args:
        cli_value: Value of the --threads flag, if given.

    Returns:
        Positive thread count.

    Raises:
        ValueError: If the resolved value is not a positive integer.
    """
    if cli_value is not None:
        threads = cli_value
    else:
        # Load environment variables from .env file if it exists
        load_dotenv()
        env_value = os.environ.get(THREADS_ENV_VAR)
        if env_value:
            try:
                threads = int(env_value)
            except ValueError:
                error_msg = f"{THREADS_ENV_VAR} must be an integer, got {env_value!r}"
                logger.error(error_msg)
                raise ValueError(error_msg)
        else:
            threads = os.cpu_count() or 1

    if threads < 1:
        error_msg = f"Thread count must be positive, got {threads}"
        logger.error(error_msg)
        raise ValueError(error_msg)

    return threads


def get_nested_config(config: Dict[str, Any], key_path: str, default: Optional[Any] = None) -> Any:
    """
    Get a nested configuration value using dot notation.

    Args:
        config: Configuration dictionary.
        key_path: Dot-separated path to the configuration value.
        default: Default value to return if the key is not found.

    Returns:
        The configuration value or the default value if not found.
    """
    parts = key_path.split('.')
    current = config

    for part in parts:
        if not isinstance(current, dict) or part not in current:
            return default
        current = current[part]

    return current
