"""
Configuration management for ContrastGuard.

Uses pydantic-settings for process-level settings (logging, paths, seed,
worker count, tracing) with environment variable support. Experiment-level
configuration lives in the pydantic models of each module and in the YAML
presets under src/templates.
"""

import hashlib
import json
from functools import lru_cache
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Application settings loaded from environment variables."""

    model_config = SettingsConfigDict(
        env_prefix="CONTRASTGUARD_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    # Application
    app_name: str = "ContrastGuard"
    app_env: Literal["development", "staging", "production"] = "development"
    debug: bool = False
    log_level: str = "INFO"

    # Data and artifacts
    data_dir: Path | None = None
    output_dir: Path = Path("runs/latest")
    seed: int = 0
    workers: int = Field(default=4, ge=1)

    # Observability
    enable_tracing: bool = False
    otel_exporter_otlp_endpoint: str = ""
    otel_service_name: str = "contrastguard"

    @property
    def is_production(self) -> bool:
        """Check if running in production environment."""
        return self.app_env == "production"


@lru_cache
def get_settings() -> Settings:
    """Get cached settings instance."""
    return Settings()


def config_hash(config: BaseModel) -> str:
    """SHA-256 of a config's canonical JSON (sorted keys, compact separators)."""
    payload = json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


# Convenience export
settings = get_settings()
