"""
Run configuration: defaults < environment (MELLM_*) < YAML file < command-line flags.
"""
from pathlib import Path
from typing import Any, Literal, Optional

import yaml
from pydantic import BaseModel, Field, ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from src.core.params import EndpointConfig, SynthConfig, TvL1Params
from src.utils.errors import InvalidConfigError


class PathsConfig(BaseModel):
    input: Optional[Path] = Field(default=None, description="Default sample tree or input file")
    output: Optional[Path] = Field(default=None, description="Default output location")


class RunConfig(BaseSettings):
    """
    Example (YAML):
        task: three_class
        flow_source: builtin_tvl1
        seed: 7
        endpoint:
          base_url: http://localhost:8000/v1
          max_in_flight: 8
        solver:
          warps_per_level: 5
    """
    model_config = SettingsConfigDict(
        env_prefix="MELLM_",
        env_nested_delimiter="__",
        extra="ignore",
    )

    task: Literal["three_class", "seven_class"] = "three_class"
    flow_source: Literal["builtin_tvl1", "external_flo"] = "builtin_tvl1"
    paths: PathsConfig = Field(default_factory=PathsConfig)
    endpoint: EndpointConfig = Field(default_factory=EndpointConfig)
    solver: TvL1Params = Field(default_factory=TvL1Params)
    synth: SynthConfig = Field(default_factory=SynthConfig)
    seed: int = Field(default=0, ge=0)


def _deep_merge(base: dict, override: dict) -> dict:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def read_config_file(path: str | Path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise InvalidConfigError(f"Config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as e:
        raise InvalidConfigError(f"{path}: invalid YAML ({e})") from e
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise InvalidConfigError(f"{path}: top level must be a mapping")
    return data


def load_run_config(path: str | Path | None = None, overrides: dict[str, Any] | None = None) -> RunConfig:
    """
    Build the effective configuration. `overrides` holds command-line values
    (nested dicts for sections); None entries are ignored.

    Raises:
        InvalidConfigError: unreadable file or values failing validation
    """
    values = read_config_file(path) if path is not None else {}
    values = _deep_merge(values, _drop_none(overrides or {}))
    try:
        return RunConfig(**values)
    except ValidationError as e:
        raise InvalidConfigError(_describe(e)) from e


def _drop_none(values: dict) -> dict:
    cleaned = {}
    for key, value in values.items():
        if isinstance(value, dict):
            value = _drop_none(value)
            if value:
                cleaned[key] = value
        elif value is not None:
            cleaned[key] = value
    return cleaned


def _describe(error: ValidationError) -> str:
    parts = []
    for item in error.errors():
        location = ".".join(str(p) for p in item["loc"]) or "config"
        parts.append(f"{location}: {item['msg']}")
    return "; ".join(parts)
