"""Utility functions for track3d."""

from .logger import get_logger, setup_logging
from .validators import (
    ensure_finite,
    parse_grid_spec,
    validate_binary,
    validate_cluster_count,
    validate_grid_spec,
)

__all__ = [
    "ensure_finite",
    "get_logger",
    "parse_grid_spec",
    "setup_logging",
    "validate_binary",
    "validate_cluster_count",
    "validate_grid_spec",
]
