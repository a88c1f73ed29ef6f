"""Application configuration using pydantic-settings."""

from pathlib import Path
from typing import Any, Optional

from pydantic import Field, ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from app.utils.error_handler import ConfigError


class Settings(BaseSettings):
    """
    Application settings loaded from environment variables.

    All settings can be configured via environment variables, a .env file,
    or a flat key=value config file passed to the CLI (see `load_settings`).
    """

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    # ========================================================================
    # Application Settings
    # ========================================================================
    app_name: str = Field(default="PMU Event Identifier", description="Application name")
    app_version: str = Field(default="1.0.0", description="Application version")
    log_level: str = Field(default="INFO", description="Logging level (DEBUG, INFO, WARNING, ERROR)")
    log_file: Optional[str] = Field(default=None, description="Optional rotating log file path")
    data_dir: str = Field(default="data", description="Default output directory for CLI artifacts")

    # ========================================================================
    # Reproducibility
    # ========================================================================
    seed: int = Field(default=7, description="Master seed for every random draw")

    # ========================================================================
    # Markov Transition Field Settings
    # ========================================================================
    q: int = Field(default=8, ge=2, description="Number of quantile bins per window channel")

    # ========================================================================
    # Network & Training Settings
    # ========================================================================
    spp_levels: list[int] = Field(
        default=[1, 2, 4], description="Spatial pyramid bin-grid sizes (level L gives L x L bins)"
    )
    dropout: float = Field(default=0.25, ge=0.0, lt=1.0, description="Dropout rate at both dropout sites")
    batch_size: int = Field(default=32, ge=2, description="Mini-batch size (batch norm needs >= 2)")
    epochs: int = Field(default=30, ge=1, description="Training epochs")
    lr: float = Field(default=1e-3, gt=0.0, description="Adam learning rate")
    beta1: float = Field(default=0.9, ge=0.0, lt=1.0, description="Adam first-moment decay")
    beta2: float = Field(default=0.999, ge=0.0, lt=1.0, description="Adam second-moment decay")
    eps: float = Field(default=1e-8, gt=0.0, description="Adam denominator epsilon")
    test_fraction: float = Field(
        default=0.2, gt=0.0, lt=1.0, description="Share of events held out for testing"
    )

    # ========================================================================
    # Synthetic Data Settings
    # ========================================================================
    pmu_count: int = Field(default=43, ge=1, description="PMUs per synthetic event")
    noise_sigma: float = Field(default=0.0005, ge=0.0, description="Measurement noise sigma (per-unit)")
    sample_rate_hz: int = Field(default=60, description="Synthetic sample rate (30 or 60)")

    # ========================================================================
    # Evaluation Settings
    # ========================================================================
    vote_threshold: float = Field(
        default=0.9, ge=0.0, lt=1.0, description="Share of agreeing PMUs needed for a system-level verdict"
    )

    # ========================================================================
    # Parallelism Settings
    # ========================================================================
    max_parallel_workers: int = Field(
        default=4,
        ge=1,
        description="Maximum number of concurrent workers for per-event and per-trial fan-out (1 = sequential)",
    )


def read_config_file(path: Path) -> dict[str, Any]:
    """
    Parse a flat key=value config file.

    Blank lines and lines starting with '#' are ignored. Values containing a
    comma are split into lists (e.g. ``spp_levels = 1,2,4``).

    Args:
        path: Config file path

    Returns:
        Mapping of raw string (or list of string) values
    """
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")

    values: dict[str, Any] = {}
    for line_no, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{line_no}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in Settings.model_fields:
            raise ConfigError(f"{path}:{line_no}: unknown config key {key!r}")
        values[key] = [v.strip() for v in value.split(",") if v.strip()] if "," in value else value
    return values


def load_settings(
    config_file: Optional[Path] = None,
    overrides: Optional[dict[str, Any]] = None,
) -> Settings:
    """
    Build settings with precedence: overrides > config file > env/.env > defaults.

    Args:
        config_file: Optional flat key=value config file
        overrides: CLI flag values; None entries are ignored

    Returns:
        Validated Settings instance
    """
    values: dict[str, Any] = {}
    if config_file is not None:
        values.update(read_config_file(config_file))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in Settings.model_fields:
            raise ConfigError(f"Unknown setting: {key}")
        values[key] = value

    # spp_levels given as a single value in a file ("4") still means a list
    if isinstance(values.get("spp_levels"), (str, int)):
        values["spp_levels"] = [values["spp_levels"]]

    try:
        loaded = Settings(**values)
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration: {e}") from e

    if loaded.sample_rate_hz not in (30, 60):
        raise ConfigError(f"sample_rate_hz must be 30 or 60, got {loaded.sample_rate_hz}")
    return loaded


# Global settings instance
settings = Settings()
