"""Configuration management for track3d."""

from functools import lru_cache
from pathlib import Path
from typing import Any

import yaml
from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict

from . import __version__


class Settings(BaseSettings):
    """Process-wide settings, read from ``TRACK3D_*`` environment variables."""

    model_config = SettingsConfigDict(
        env_prefix="TRACK3D_",
        env_file=".env",
        case_sensitive=False,
        extra="ignore",
    )

    # 应用配置
    app_name: str = Field("track3d", description="Application name")
    debug: bool = Field(False, description="Debug mode")
    log_level: str = Field("INFO", description="Logging level")
    tool_version: str = Field(__version__, description="Version stamped into manifests")

    # 数值配置
    deterministic: bool = Field(
        False, description="Deterministic numeric mode (single thread, fixed kernels)"
    )
    device: str = Field("cpu", description="Torch device for networks")
    num_threads: int = Field(1, ge=1, description="Torch intra-op threads")

    def is_development(self) -> bool:
        """Check if running in development mode."""
        return self.debug

    def is_production(self) -> bool:
        """Check if running in production mode."""
        return not self.debug


@lru_cache
def get_settings() -> Settings:
    """Return the cached settings instance."""
    return Settings()


def load_config_file(path: str | Path) -> dict[str, Any]:
    """Read a YAML key-value tree.

    Args:
        path: Path to the YAML file

    Returns:
        Parsed mapping (empty for an empty file)

    Raises:
        ValueError: If the document is not a mapping
    """
    text = Path(path).read_text(encoding="utf-8")
    data = yaml.safe_load(text) or {}
    if not isinstance(data, dict):
        raise ValueError(f"Config file {path} must contain a mapping, got {type(data).__name__}")
    return data


# Global settings instance
settings = get_settings()
