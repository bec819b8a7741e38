"""Logging utilities for track3d."""

import logging
import sys

from ..config import settings

_DEV_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(funcName)s:%(lineno)d - %(message)s"
_PROD_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def _make_handler(log_level: int) -> logging.Handler:
    handler = logging.StreamHandler(sys.stdout)
    handler.setLevel(log_level)
    fmt = _DEV_FORMAT if settings.is_development() else _PROD_FORMAT
    handler.setFormatter(logging.Formatter(fmt))
    return handler


def get_logger(name: str | None = None) -> logging.Logger:
    """Get a configured logger instance.

    Args:
        name: Logger name, defaults to the calling module name

    Returns:
        Configured logger instance
    """
    logger = logging.getLogger(name or __name__)

    # Only configure if not already configured
    if not logger.handlers:
        log_level = getattr(logging, settings.log_level.upper(), logging.INFO)
        logger.setLevel(log_level)
        logger.addHandler(_make_handler(log_level))

        # Prevent propagation to avoid duplicate logs
        logger.propagate = False

    return logger


def setup_logging(level: str | None = None) -> None:
    """Setup global logging configuration for command-line runs.

    Args:
        level: Optional level name overriding ``settings.log_level``
    """
    root_logger = logging.getLogger()
    log_level = getattr(logging, (level or settings.log_level).upper(), logging.INFO)
    root_logger.setLevel(log_level)

    for handler in root_logger.handlers[:]:
        root_logger.removeHandler(handler)
    root_logger.addHandler(_make_handler(log_level))

    # Re-level package loggers created before this call
    for name, logger in logging.root.manager.loggerDict.items():
        if name.startswith("track3d") and isinstance(logger, logging.Logger):
            logger.setLevel(log_level)
            for handler in logger.handlers:
                handler.setLevel(log_level)

    # Suppress noisy third-party loggers in production
    if settings.is_production():
        logging.getLogger("PIL").setLevel(logging.WARNING)
