"""
Centralized configuration.

- ``settings``: process-level knobs loaded from the environment / ``.env``.
- ``EngineConfig``: the engine schema loaded from a YAML file. Every section
  forbids unknown keys; defaults reproduce the standard training recipe.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Any, Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from tae.errors import ConfigError

Mode = Literal["baseline", "TA", "TA+MC"]
MODES: tuple[str, ...] = ("baseline", "TA", "TA+MC")


class Settings(BaseSettings):
    """Process settings, loaded from a .env file or ``TAE_*`` environment variables."""

    model_config = SettingsConfigDict(
        env_prefix="TAE_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    # ── Logging ─────────────────────────────────────────────
    log_level: str = "info"
    log_format: Literal["console", "json"] = "console"

    # ── Parallelism ─────────────────────────────────────────
    jobs: int = 1
    torch_threads: int = 0  # 0 keeps torch's own default

    @property
    def log_level_number(self) -> int:
        level = getattr(logging, self.log_level.upper(), logging.INFO)
        return level if isinstance(level, int) else logging.INFO


settings = Settings()


# ── Engine schema ───────────────────────────────────────────────────────────

class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", allow_inf_nan=False)


class LossWeights(_Section):
    lambda_loc: float = Field(1.0, ge=0)
    lambda_1: float = Field(1.0, ge=0)  # exposure
    lambda_2: float = Field(0.2, ge=0)  # color
    lambda_3: float = Field(0.1, ge=0)  # tv


class ExposureConfig(_Section):
    patch: int = Field(16, gt=0)
    target_E: float = Field(0.6, gt=0, lt=1)


class TrainConfig(_Section):
    epochs: int = Field(30, ge=0)
    batch_size: int = Field(16, gt=0)
    learning_rate: float = Field(1e-4, ge=0)
    weight_decay: float = Field(1e-4, ge=0)
    input_size: int = Field(256, ge=8)
    seed: int | None = None
    mode: Mode = "TA+MC"
    loss_weights: LossWeights = Field(default_factory=LossWeights)
    exposure: ExposureConfig = Field(default_factory=ExposureConfig)
    lr_schedule: Literal["constant", "cosine"] = "constant"
    hflip: bool = False
    frame_stride: int = Field(1, gt=0)
    loader_workers: int = Field(2, ge=1)
    prefetch: int = Field(16, gt=0)


class GuidanceConfig(_Section):
    channels: int = Field(16, gt=0)
    leaky_slope: float = Field(0.1, ge=0, lt=1)
    zero_outside_box: bool = False
    loc_reduction: Literal["mean", "sum"] = "mean"


class EnhancementConfig(_Section):
    alpha_source: Literal["predicted", "global"] = "predicted"
    predictor_channels: int = Field(16, gt=0)


class MetricConfig(_Section):
    success_steps: int = Field(21, ge=2)
    precision_max_px: int = Field(50, ge=1)
    precision_at_px: float = Field(20.0, ge=0)
    norm_precision_max: float = Field(0.5, gt=0)
    norm_precision_steps: int = Field(51, ge=2)


class TrackerConfig(_Section):
    name: Literal["ncc", "oracle", "static"] = "ncc"
    search_radius: int = Field(16, ge=1)
    template_size: int | None = Field(None, gt=0)


class SynthConfig(_Section):
    train_sequences: int = Field(30, ge=0)
    test_sequences: int = Field(10, ge=0)
    frames: int = Field(60, ge=2)
    height: int = Field(96, ge=8)
    width: int = Field(128, ge=8)
    base_intensity: float = Field(0.05, ge=0, le=1)
    noise_sigma: float = Field(0.02, ge=0)
    target_intensity: float = Field(0.25, ge=0, le=1)
    target_size: int = Field(12, ge=2)
    target_speed: float = Field(1.5, ge=0)
    seed: int | None = None


class PathsConfig(_Section):
    dataset_root: Path | None = None
    output_dir: Path = Path("runs")


class EngineConfig(_Section):
    seed: int = 0
    train: TrainConfig = Field(default_factory=TrainConfig)
    guidance: GuidanceConfig = Field(default_factory=GuidanceConfig)
    enhancement: EnhancementConfig = Field(default_factory=EnhancementConfig)
    metrics: MetricConfig = Field(default_factory=MetricConfig)
    tracker: TrackerConfig = Field(default_factory=TrackerConfig)
    synth: SynthConfig = Field(default_factory=SynthConfig)
    paths: PathsConfig = Field(default_factory=PathsConfig)

    @model_validator(mode="after")
    def _inherit_seed(self) -> "EngineConfig":
        if self.train.seed is None:
            self.train.seed = self.seed
        if self.synth.seed is None:
            self.synth.seed = self.seed
        return self


# ── File I/O ────────────────────────────────────────────────────────────────

def parse_config(data: dict[str, Any] | None) -> EngineConfig:
    """Validate a raw mapping into an ``EngineConfig``."""
    try:
        return EngineConfig.model_validate(data or {})
    except ValidationError as exc:
        first = exc.errors()[0]
        key = ".".join(str(p) for p in first["loc"]) or "<root>"
        raise ConfigError(f"{key}: {first['msg']}") from exc


def load_config(path: Path | str | None) -> EngineConfig:
    """Load an ``EngineConfig`` from YAML; ``None`` yields the defaults."""
    if path is None:
        return EngineConfig()
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return parse_config(raw)


def config_to_dict(cfg: EngineConfig) -> dict[str, Any]:
    return cfg.model_dump(mode="json")


def dump_config(cfg: EngineConfig, path: Path | str | None = None) -> str:
    """Serialize to YAML; also writes *path* when given."""
    text = yaml.safe_dump(config_to_dict(cfg), sort_keys=False)
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text
