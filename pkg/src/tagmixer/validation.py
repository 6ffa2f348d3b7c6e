"""Small input-validation helpers used across modules."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError


def check_positive(name: str, value) -> None:
    if value is None or value <= 0:
        raise ConfigError(f"{name} must be positive, got {value!r}")


def check_choice(name: str, value, choices) -> None:
    if value not in choices:
        raise ConfigError(f"{name} must be one of {sorted(choices)}, got {value!r}")


def check_shape(name: str, arr: np.ndarray, shape: tuple) -> None:
    """Raise unless ``arr`` has exactly the given shape."""
    if tuple(arr.shape) != tuple(shape):
        raise ConfigError(f"{name}: expected shape {tuple(shape)}, got {tuple(arr.shape)}")


def check_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{name} contains non-finite entries")


def check_label_ids(label_ids, n_tags: int) -> None:
    for lid in label_ids:
        if not 0 <= lid < n_tags:
            raise ConfigError(f"label id {lid} outside [0, {n_tags})")
