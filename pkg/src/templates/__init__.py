"""
Experiment Presets Module

Loads named experiment presets (ci, desk, full) from YAML files in this
directory. Presets are parsed with yaml.safe_load and cached.
"""

import copy
from pathlib import Path
from typing import Any

import yaml

from src.core.errors import ContrastGuardError
from src.observability.logger import get_logger

logger = get_logger(__name__, component="presets")

# Preset directory path
PRESETS_DIR = Path(__file__).parent

PRESET_NAMES = ("ci", "desk", "full")

# Cache for loaded presets
_preset_cache: dict[str, dict[str, Any]] = {}


class PresetLoadError(ContrastGuardError):
    """Raised when a preset fails to load."""


def _load_preset_file(filename: str) -> dict[str, Any]:
    """
    Load a YAML preset file.

    Args:
        filename: Name of the YAML file (e.g., 'desk.yaml')

    Returns:
        Dictionary containing preset data

    Raises:
        PresetLoadError: If file cannot be loaded or parsed
    """
    filepath = PRESETS_DIR / filename

    if not filepath.exists():
        raise PresetLoadError(f"Preset file not found: {filepath}")

    # Presets must live in this directory
    try:
        filepath.resolve().relative_to(PRESETS_DIR.resolve())
    except ValueError:
        raise PresetLoadError(f"Preset path traversal detected: {filename}") from None

    try:
        with open(filepath, encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise PresetLoadError(f"Invalid YAML in {filename}: {e}") from e
    except OSError as e:
        raise PresetLoadError(f"Cannot read {filename}: {e}") from e

    if not isinstance(data, dict) or not isinstance(data.get("config", {}), dict):
        raise PresetLoadError(f"Preset must be a YAML mapping with a 'config' mapping: {filename}")

    logger.debug("Preset loaded", filename=filename)
    return data


def get_preset(name: str) -> dict[str, Any]:
    """
    Get the experiment config overrides of a preset (cached).

    Args:
        name: Preset name without extension (e.g., 'desk')

    Returns:
        Nested mapping validated later into ExperimentConfig
    """
    if name not in PRESET_NAMES:
        raise PresetLoadError(f"Unknown preset {name!r}; choose from {', '.join(PRESET_NAMES)}")
    if name not in _preset_cache:
        _preset_cache[name] = _load_preset_file(f"{name}.yaml")

    return copy.deepcopy(_preset_cache[name].get("config") or {})
