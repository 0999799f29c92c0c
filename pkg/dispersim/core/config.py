"""
Tool settings for dispersim (not experiment files; see experiment.py).
"""

import json
import logging
import os
from dataclasses import asdict, dataclass
from typing import Any, Dict, Optional

import yaml

from .exceptions import ConfigurationError

logger = logging.getLogger(__name__)

THREADS_ENV = 'DISPERSIM_THREADS'


@dataclass
class SimulationConfig:
    """Defaults applied when an experiment file leaves a value open."""

    # Parallelism
    threads: int = 1

    # Time stepping
    default_dt: float = 1e-3

    # Spectral analysis
    gap_tol: float = 0.05
    bound_state_tol: float = 1e-6

    # Output
    output_directory: str = "./runs"
    show_progress: bool = False


class ConfigManager:
    """
    Loads, saves and validates SimulationConfig from JSON or YAML files.
    """

    DEFAULT_CONFIG_PATHS = [
        "./dispersim.json",
        "./dispersim.yaml",
        "~/.dispersim/config.json",
        "~/.dispersim/config.yaml",
    ]

    def __init__(self, config_path: Optional[str] = None):
        """
        Args:
            config_path: Optional settings file; default locations are searched otherwise
        """
        self.config_path = config_path
        self.config = SimulationConfig()

        if config_path:
            self.load_config(config_path)
        else:
            self.load_default_config()

    def load_default_config(self):
        """Load the first readable file among the default locations."""
        for path in self.DEFAULT_CONFIG_PATHS:
            expanded_path = os.path.expanduser(path)
            if os.path.exists(expanded_path):
                try:
                    self.load_config(expanded_path)
                    logger.debug("Loaded settings from %s", expanded_path)
                    break
                except ConfigurationError as e:
                    logger.warning("Ignoring settings file %s: %s", expanded_path, e)

    def load_config(self, config_path: str):
        """
        Load settings from file.

        Raises:
            ConfigurationError: If the file is missing, unreadable or has an unknown format
        """
        if not os.path.exists(config_path):
            raise ConfigurationError(f"Settings file not found: {config_path}")

        data = read_structured_file(config_path)
        if not isinstance(data, dict):
            raise ConfigurationError(f"Settings file {config_path} must hold a mapping")
        self._update_config(data)
        self.validate_config()

    def save_config(self, config_path: Optional[str] = None):
        """Write the current settings as JSON or YAML (by extension)."""
        if config_path is None:
            config_path = self.config_path or "./dispersim.json"

        directory = os.path.dirname(config_path)
        if directory:
            os.makedirs(directory, exist_ok=True)

        file_ext = os.path.splitext(config_path)[1].lower()
        with open(config_path, 'w', encoding='utf-8') as f:
            if file_ext == '.json':
                json.dump(asdict(self.config), f, indent=2)
            elif file_ext in ('.yaml', '.yml'):
                yaml.safe_dump(asdict(self.config), f, default_flow_style=False)
            else:
                raise ConfigurationError(f"Unsupported settings format: {file_ext}")

    def _update_config(self, data: Dict[str, Any]):
        for key, value in data.items():
            if hasattr(self.config, key):
                setattr(self.config, key, value)
            else:
                logger.warning("Unknown settings key '%s' ignored", key)

    def get(self, key: str, default: Any = None) -> Any:
        return getattr(self.config, key, default)

    def set(self, key: str, value: Any):
        if hasattr(self.config, key):
            setattr(self.config, key, value)
        else:
            raise ConfigurationError(f"Unknown settings key: {key}")

    def validate_config(self) -> bool:
        """
        Validate settings values.

        Returns:
            True if the settings are usable

        Raises:
            ConfigurationError: Describing the first invalid value
        """
        if int(self.config.threads) < 1:
            raise ConfigurationError("threads must be at least 1")
        if not self.config.default_dt > 0:
            raise ConfigurationError("default_dt must be positive")
        if not self.config.gap_tol > 0:
            raise ConfigurationError("gap_tol must be positive")
        if not self.config.bound_state_tol > 0:
            raise ConfigurationError("bound_state_tol must be positive")
        return True

    def resolve_threads(self, requested: Optional[int] = None) -> int:
        """
        Thread count: DISPERSIM_THREADS wins over the requested value,
        which wins over the settings file.
        """
        env = os.environ.get(THREADS_ENV)
        if env:
            try:
                threads = int(env)
            except ValueError:
                raise ConfigurationError(f"{THREADS_ENV} must be an integer, got '{env}'")
        elif requested is not None:
            threads = int(requested)
        else:
            threads = int(self.config.threads)
        if threads < 1:
            raise ConfigurationError(f"Thread count must be at least 1, got {threads}")
        return threads

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self.config)

    def from_dict(self, data: Dict[str, Any]):
        self._update_config(data)

    def __str__(self) -> str:
        return json.dumps(asdict(self.config), indent=2)


def read_structured_file(path: str) -> Any:
    """
    Parse a JSON or YAML file chosen by extension.

    Raises:
        ConfigurationError: For unknown extensions or parse errors
    """
    file_ext = os.path.splitext(path)[1].lower()
    try:
        with open(path, 'r', encoding='utf-8') as f:
            if file_ext == '.json':
                return json.load(f)
            if file_ext in ('.yaml', '.yml'):
                return yaml.safe_load(f)
    except (OSError, json.JSONDecodeError, yaml.YAMLError) as e:
        raise ConfigurationError(f"Failed to read {path}: {e}")
    raise ConfigurationError(f"Unsupported file format: {file_ext}")


_global_config = None


def get_config(config_path: Optional[str] = None) -> ConfigManager:
    """Process-wide settings instance."""
    global _global_config

    if _global_config is None or config_path is not None:
        _global_config = ConfigManager(config_path)

    return _global_config


def reset_config():
    global _global_config
    _global_config = None
