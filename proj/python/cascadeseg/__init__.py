"""Cascade decoder segmentation networks with a C++ core."""

import json

from ._cseg import (
    ConfigError,
    DivergenceError,
    FormatError,
    Network,
    ShapeError,
    boundary_distances,
    conv,
    deconv,
    dice,
    generate_samples,
    maxpool,
    run_cli,
    softmax,
)

__all__ = [
    "ConfigError",
    "DivergenceError",
    "FormatError",
    "Network",
    "ShapeError",
    "boundary_distances",
    "config_json",
    "conv",
    "deconv",
    "dice",
    "generate_samples",
    "maxpool",
    "run_cli",
    "softmax",
]


def config_json(config):
    """Accepts a dict or a JSON string and returns JSON text."""
    return config if isinstance(config, str) else json.dumps(config)
