"""Configuration loader with defaults and environment overrides.

The YAML file is optional: every setting has a default in DEFAULT_CONFIG, the
file (when present) is deep-merged over the defaults, and a few environment
variables override both.

Example:
    >>> from ddcascade.config_loader import load_config, blocking_params
    >>> config = load_config('config.yaml')
    >>> params = blocking_params(config)
    >>> print(params.kc)
    256
"""

import copy
import logging
import os
from typing import Any, Dict

import yaml

from ddcascade.dgemm import BlockingParams
from ddcascade.validators import ValidationError


logger = logging.getLogger(__name__)

LOG_LEVELS = ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL')

DEFAULT_CONFIG: Dict[str, Any] = {
    'blocking': {'mc': 256, 'nc': 4096, 'kc': 256, 'mr': 4, 'nr': 4},
    'logging': {'level': 'INFO', 'dir': 'logs', 'console': True, 'retention_days': 30},
    'paths': {'output': 'output'},
    'selftest': {
        'quick': {'dd_pairs': 2000, 'split_rows': 200, 'bin_panels': 20, 'bound_dots': 200,
                  'path_shapes': 4, 'dgemm_shapes': 6,
                  'fp64x2_dots': 200, 'accuracy_shapes': 5, 'illcond_suites': 3},
        'full': {'dd_pairs': 100000, 'split_rows': 100000, 'bin_panels': 10000, 'bound_dots': 100000,
                 'path_shapes': 20, 'dgemm_shapes': 50,
                 'fp64x2_dots': 100000, 'accuracy_shapes': 100, 'illcond_suites': 30},
    },
    'bench': {'reps': 3, 'sizes': [64, 128, 256]},
    'threads': 1,
}

ENV_OVERRIDES = {
    'DDCASCADE_LOG_LEVEL': ('logging.level', str),
    'DDCASCADE_KC': ('blocking.kc', int),
    'DDCASCADE_THREADS': ('threads', int),
}


class ConfigError(Exception):
    """Raised when configuration is invalid or missing."""
    pass


def _deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def set_config_value(config: Dict[str, Any], key_path: str, value: Any) -> None:
    """Set a value using dot notation, creating sections as needed."""
    keys = key_path.split('.')
    section = config
    for key in keys[:-1]:
        section = section.setdefault(key, {})
    section[keys[-1]] = value


def apply_env_overrides(config: Dict[str, Any]) -> Dict[str, Any]:
    """Apply DDCASCADE_* environment overrides in place.

    Raises:
        ConfigError: If an override cannot be converted
    """
    for var, (key_path, convert) in ENV_OVERRIDES.items():
        raw = os.environ.get(var)
        if raw is None or raw == '':
            continue
        try:
            value = convert(raw)
        except ValueError:
            raise ConfigError(f"{var}={raw!r} is not a valid {convert.__name__}")
        set_config_value(config, key_path, value)
        logger.debug(f"{var} overrides {key_path} = {value!r}")
    return config


def validate_config(config: Dict[str, Any]) -> None:
    """Validate configuration values.

    Args:
        config: Configuration dictionary

    Raises:
        ConfigError: If a value is missing or out of range
    """
    for section in ('blocking', 'logging', 'paths', 'selftest', 'bench'):
        if not isinstance(config.get(section), dict):
            raise ConfigError(f"Missing required configuration section: {section}")

    try:
        blocking_params(config)
    except ValidationError as e:
        raise ConfigError(f"Invalid blocking parameters: {e}")

    level = str(config['logging'].get('level', '')).upper()
    if level not in LOG_LEVELS:
        raise ConfigError(f"Unknown log level {config['logging'].get('level')!r}")

    threads = config.get('threads')
    if not isinstance(threads, int) or threads < 1:
        raise ConfigError(f"threads must be a positive integer, got {threads!r}")

    reps = get_config_value(config, 'bench.reps')
    if not isinstance(reps, int) or reps < 1:
        raise ConfigError(f"bench.reps must be a positive integer, got {reps!r}")

    for mode in ('quick', 'full'):
        counts = get_config_value(config, f'selftest.{mode}')
        if not isinstance(counts, dict):
            raise ConfigError(f"selftest.{mode} must be a mapping of trial counts")
        for name, count in counts.items():
            if not isinstance(count, int) or count < 1:
                raise ConfigError(f"selftest.{mode}.{name} must be a positive integer, got {count!r}")


def load_config(config_path: str = 'config.yaml', validate: bool = True,
                required: bool = False) -> Dict[str, Any]:
    """Load configuration from YAML over the built-in defaults.

    Args:
        config_path: Path to the YAML configuration file
        validate: Whether to validate the configuration (default: True)
        required: Whether a missing file is an error (default: False)

    Returns:
        Configuration dictionary

    Raises:
        ConfigError: If configuration is invalid, or missing while required

    Example:
        >>> config = load_config('config.yaml')
        >>> print(config['blocking']['kc'])
        256
    """
    file_config: Dict[str, Any] = {}
    if os.path.exists(config_path):
        try:
            with open(config_path, 'r') as f:
                file_config = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"Failed to parse YAML configuration: {e}")
        except OSError as e:
            raise ConfigError(f"Failed to load configuration: {e}")
        if not isinstance(file_config, dict):
            raise ConfigError(f"Configuration file {config_path} must contain a mapping")
    elif required:
        raise ConfigError(f"Configuration file not found: {config_path}")

    config = _deep_merge(DEFAULT_CONFIG, file_config)
    config = apply_env_overrides(config)

    if validate:
        validate_config(config)

    return config


def get_config_value(config: Dict[str, Any], key_path: str, default: Any = None) -> Any:
    """Get a configuration value using dot notation.

    Args:
        config: Configuration dictionary
        key_path: Dot-separated path to the value (e.g., 'blocking.kc')
        default: Default value if key not found

    Returns:
        Configuration value or default
    """
    keys = key_path.split('.')
    value = config

    for key in keys:
        if isinstance(value, dict):
            value = value.get(key)
            if value is None:
                return default
        else:
            return default

    return value


def blocking_params(config: Dict[str, Any]) -> BlockingParams:
    """BlockingParams from the ``blocking`` section.

    Raises:
        ValidationError: If the values are inconsistent
    """
    section = config.get('blocking') or {}
    defaults = DEFAULT_CONFIG['blocking']
    return BlockingParams(**{key: section.get(key, defaults[key]) for key in defaults})
