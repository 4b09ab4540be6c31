"""Configuration management: process settings and experiment files"""
from __future__ import annotations

import configparser
import io
from functools import lru_cache
from pathlib import Path
from typing import Annotated, Any

from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, ValidationError, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from .models import ConfigError, CovarianceSpec, TorusGrid

SCHEMA_VERSION = 1


class Settings(BaseSettings):
    """Runtime settings loaded from ``BJS_*`` environment variables and ``.env``."""

    model_config = SettingsConfigDict(
        env_prefix="BJS_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    threads: int = Field(default=1, ge=1, description="Worker processes for replicate runs")
    out_dir: str = Field(default="out")
    log_level: str = Field(default="INFO")
    template_path: str = Field(default="resources/report_template.md")

    @classmethod
    @lru_cache(maxsize=1)
    def load(cls) -> Settings:
        """Return a cached settings instance."""
        return cls()


# ============================================================================
# Experiment configuration
# ============================================================================

def _split(value: Any) -> Any:
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


FloatList = Annotated[tuple[float, ...], BeforeValidator(_split)]
NameList = Annotated[tuple[str, ...], BeforeValidator(_split)]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)


class ExperimentSection(_Section):
    name: str
    schema_version: int = SCHEMA_VERSION
    reps: int = Field(default=10, ge=1)
    out_dir: str = "out"

    @field_validator("schema_version")
    @classmethod
    def _known_schema(cls, value: int) -> int:
        if value != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {value}")
        return value


class GridSection(_Section):
    n_space: int = Field(default=128, ge=8)
    dt: float = Field(default=1e-3, gt=0)


class NoiseSection(_Section):
    mode_weights: FloatList = Field(default=(0.0, 0.5, 0.25), alias="lambda")
    white: bool = False
    amplitude: float = Field(default=1.0, ge=0)
    seed: int = 0

    def covariance(self) -> CovarianceSpec:
        return CovarianceSpec(mode_weights=self.mode_weights, is_white=self.white, white_amplitude=self.amplitude)


class RunSection(_Section):
    """Experiment parameters; each experiment reads the subset it needs"""

    thetas: FloatList = (0.0,)
    horizons: FloatList = (2.0, 4.0, 6.0, 8.0)
    eps: FloatList = (0.1, 0.05)
    T: float = Field(default=4.0, gt=0)
    T_warm: float = Field(default=10.0, ge=0)
    s_max: float = Field(default=6.0, gt=0)
    T_proxy: float = Field(default=10.0, gt=0)
    x: float = 0.0
    s: float = Field(default=1.0, gt=0)
    s_list: FloatList = ()
    t_list: FloatList = (0.5, 1.0, 2.0)
    x_list: FloatList = (0.25, 0.5, 0.75)
    n_paths: int = Field(default=200, ge=1)
    n_bridge: int = Field(default=2000, ge=1)
    observables: NameList = ("u00", "u00_sq")

    @field_validator("s_list")
    @classmethod
    def _positive_times(cls, value: tuple[float, ...]) -> tuple[float, ...]:
        if any(s <= 0 for s in value):
            raise ValueError("s_list entries must be positive")
        return value


class ExperimentConfig(_Section):
    """Complete description of one experiment run; unknown keys are rejected."""

    experiment: ExperimentSection
    grid: GridSection = GridSection()
    noise: NoiseSection = NoiseSection()
    run: RunSection = RunSection()

    @property
    def name(self) -> str:
        return self.experiment.name

    @property
    def seed_base(self) -> int:
        return self.noise.seed

    def grid_for(self, t_start: float, t_end: float) -> TorusGrid:
        return TorusGrid(self.grid.n_space, t_start, t_end, self.grid.dt)

    def with_updates(self, section: str, **values: Any) -> ExperimentConfig:
        """Copy with fields of one section replaced (used for CLI overrides)."""
        current = getattr(self, section).model_dump(by_alias=True)
        current.update({key: value for key, value in values.items() if value is not None})
        try:
            return self.model_copy(update={section: type(getattr(self, section)).model_validate(current)})
        except ValidationError as e:
            raise ConfigError(f"Invalid [{section}] override: {e}") from e

    def to_dict(self) -> dict[str, Any]:
        return self.model_dump(by_alias=True, mode="json")


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ", ".join(_format(item) for item in value)
    return str(value)


def dump_config(config: ExperimentConfig) -> str:
    """Serialize to the INI text form accepted by :func:`parse_config`."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for section in ("experiment", "grid", "noise", "run"):
        values = getattr(config, section).model_dump(by_alias=True)
        parser[section] = {key: _format(value) for key, value in values.items()}
    buffer = io.StringIO()
    parser.write(buffer)
    return buffer.getvalue()


def parse_config(text: str) -> ExperimentConfig:
    """Parse INI text into a validated configuration.

    Raises:
        ConfigError: On syntax errors, unknown sections or keys, and invalid values
    """
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"Malformed configuration: {e}") from e
    data = {section: dict(parser[section]) for section in parser.sections()}
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration: {e}") from e


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"Cannot read configuration {path}: {e}") from e
    return parse_config(text)


def save_config(config: ExperimentConfig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_config(config), encoding="utf-8")
    return path


def default_config(name: str, **sections: dict[str, Any]) -> ExperimentConfig:
    """A configuration for ``name`` with optional per-section overrides."""
    data: dict[str, Any] = {"experiment": {"name": name}}
    data.update(sections)
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration: {e}") from e
