"""Validation utilities for track3d."""

import re

import numpy as np
import torch

from ..errors import NumericError
from ..utils.logger import get_logger

logger = get_logger(__name__)

_GRID_RE = re.compile(r"^\s*(\d+)\s*[xX]\s*(\d+)\s*$")


def ensure_finite(value: torch.Tensor | np.ndarray, name: str, **context: object) -> None:
    """Raise NumericError if ``value`` contains NaN or infinity.

    Args:
        value: Tensor or array to check
        name: Name reported in the error
        **context: Extra diagnostics (step, iteration, ...)

    Raises:
        NumericError: If any element is not finite
    """
    if isinstance(value, torch.Tensor):
        finite = bool(torch.isfinite(value).all())
    else:
        finite = bool(np.isfinite(value).all())
    if not finite:
        logger.error(f"Non-finite values in {name}: {context}")
        raise NumericError(f"Non-finite values in {name}", dict(context))


def validate_binary(flags: torch.Tensor, name: str = "visibility") -> None:
    """Require every element of ``flags`` to be exactly 0 or 1."""
    if not bool(((flags == 0) | (flags == 1)).all()):
        raise ValueError(f"{name} must contain only 0/1 values")


def validate_grid_spec(spec: str) -> tuple[bool, str | None]:
    """Validate a query grid spec such as ``8x8``.

    Args:
        spec: Grid spec string

    Returns:
        Tuple of (is_valid, error_message)
    """
    match = _GRID_RE.match(spec or "")
    if not match:
        return False, f"Invalid grid spec {spec!r}, expected COLSxROWS such as 8x8"
    cols, rows = int(match.group(1)), int(match.group(2))
    if cols < 1 or rows < 1:
        return False, "Grid dimensions must be positive"
    return True, None


def parse_grid_spec(spec: str) -> tuple[int, int]:
    """Parse ``COLSxROWS`` into integers.

    Raises:
        ValueError: If the grid string is malformed
    """
    ok, message = validate_grid_spec(spec)
    if not ok:
        raise ValueError(message)
    match = _GRID_RE.match(spec)
    assert match is not None
    return int(match.group(1)), int(match.group(2))


def validate_cluster_count(k: str | int) -> tuple[bool, str | None]:
    """Validate a cluster count argument (positive int or ``auto``)."""
    if isinstance(k, int):
        return (k >= 1, None if k >= 1 else "k must be >= 1")
    if k == "auto":
        return True, None
    if k.isdigit() and int(k) >= 1:
        return True, None
    return False, f"Invalid cluster count {k!r}, expected a positive integer or 'auto'"
