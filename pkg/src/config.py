"""Layered configuration.

Values come from the defaults below, then an optional JSON config file, then
a mapping passed in by tests, then the environment (log level only). The
command line overrides the result with any flag the user set explicitly.
"""
import json
import logging
import os
from pathlib import Path

from src import LOG_LEVEL_ENV
from src.exceptions import ConfigError

logger = logging.getLogger(__name__)

DEFAULTS = {
    # Pseudo-label filtering
    "TAU": 0.7,
    "GAMMA": 0.5,
    "LAMBDA_IOU": 2.0,
    "LAMBDA_L1": 5.0,
    "STRATEGY": "unified",
    "DROP_INFEASIBLE": False,
    # Teacher update
    "EMA_K": 0.9996,
    # Loss evaluation
    "ALPHA": 2.0,
    "BETA": 5.0,
    "FOCAL_ALPHA": 0.25,
    "FOCAL_GAMMA": 2.0,
    # Pseudo-label quality
    "IOU_THRESH": 0.5,
    # Extreme clicking simulation targets
    "EC_TARGET_MEAN": 0.82,
    "EC_TARGET_STD": 0.16,
    # Runtime
    "SEED": 0,
    "WORKERS": 1,
    "LOG_LEVEL": "WARNING",
    "LOG_FILE": None,
}


class Config(dict):
    """A dict of upper-case settings with the loaders used by create_config."""

    def from_mapping(self, mapping=None, **kwargs):
        mappings = dict(mapping or {})
        mappings.update(kwargs)
        for key, value in mappings.items():
            if key.isupper():
                self[key] = value
        return True

    def from_file(self, path, silent=False):
        """Update the values from a JSON file.

        Args:
            path: Location of the JSON config file
            silent: Return False instead of raising when the file is missing

        Returns:
            True if the file was loaded
        """
        path = Path(path)
        try:
            with open(path, "r", encoding="utf-8") as file:
                data = json.load(file)
        except FileNotFoundError:
            if silent:
                return False
            raise ConfigError(f"Config file {path} not found")
        except json.JSONDecodeError as e:
            raise ConfigError(f"Config file {path} is not valid JSON: {e}")
        if not isinstance(data, dict):
            raise ConfigError(f"Config file {path} must hold a JSON object")
        unknown = sorted(k for k in data if k not in DEFAULTS)
        if unknown:
            raise ConfigError(f"Unknown config keys in {path}: {unknown}")
        logger.debug(f"Loaded config file {path}")
        return self.from_mapping(data)


def create_config(test_config=None, config_file=None):
    """Build the configuration used by the command line.

    Args:
        test_config: Mapping applied last, used by the tests
        config_file: Optional JSON file; a missing file is skipped

    Returns:
        Config with every key of DEFAULTS set
    """
    config = Config(DEFAULTS)
    if config_file is not None:
        config.from_file(config_file, silent=True)
    if test_config is not None:
        config.from_mapping(test_config)
    if os.environ.get(LOG_LEVEL_ENV):
        config["LOG_LEVEL"] = os.environ[LOG_LEVEL_ENV]
    return config
