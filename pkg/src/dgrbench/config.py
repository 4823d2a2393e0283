from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Any, Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from dgrbench.errors import ConfigError
from dgrbench.settings import settings
from dgrbench.surfgen import MismatchSpec, SurfaceCodeSpec

ARMS = ("oracle", "mismatched", "aligned", "aligned+heuristic", "aligned+nn")
SWEEP_AXES = ("p", "d", "N", "T_trace")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class CodeConfig(_Strict):
    distance: int = 5
    rounds: Optional[int] = None
    p: float = 0.01
    p_meas: Optional[float] = None
    y_bias: float = 1.0
    dem_path: Optional[str] = None

    @field_validator("dem_path")
    @classmethod
    def _dem_exists(cls, value: Optional[str]) -> Optional[str]:
        if value is not None and not Path(value).is_file():
            raise ValueError(f"DEM file {value!r} does not exist")
        return value

    def spec(self) -> SurfaceCodeSpec:
        return SurfaceCodeSpec(
            distance=self.distance, p=self.p, rounds=self.rounds, p_meas=self.p_meas, y_bias=self.y_bias
        )


class MismatchConfig(_Strict):
    kind: Literal["random", "worst_case"] = "random"
    strength: float = Field(10.0, ge=1.0)
    seed: Optional[int] = None
    data_only: bool = False

    @property
    def is_identity(self) -> bool:
        return self.strength == 1.0

    def spec(self, fallback_seed: int) -> MismatchSpec:
        seed = fallback_seed if self.seed is None else self.seed
        return MismatchSpec(self.kind, self.strength, seed, self.data_only)


class ShotsConfig(_Strict):
    trace: int = Field(default_factory=lambda: settings.trace_shots, ge=1)
    eval: int = Field(default_factory=lambda: settings.eval_shots, ge=1)
    # trace with true-probability weights instead of the mismatched ones
    trace_with_oracle_weights: bool = False


class AlignmentPolicy(_Strict):
    window: Optional[int] = Field(None, ge=1)
    min_trials: int = Field(1, ge=1)


class CorrelationPolicy(_Strict):
    mode: Literal["off", "heuristic", "nn"] = "off"
    trigger: Optional[int] = Field(None, ge=0)
    trigger_target: float = Field(0.15, gt=0.0, lt=1.0)
    calibration_shots: int = Field(20_000, ge=100)
    pair_floor: Optional[float] = Field(None, ge=0.0)
    scale: float = 1.0
    full_pairs: bool = False
    max_hops: int = Field(2, ge=0)


class ReweightPolicy(_Strict):
    alignment: AlignmentPolicy = Field(default_factory=AlignmentPolicy)
    correlation: CorrelationPolicy = Field(default_factory=CorrelationPolicy)

    @model_validator(mode="after")
    def _window_covers_min_trials(self) -> "ReweightPolicy":
        window = self.alignment.window
        if window is not None and window < self.alignment.min_trials:
            raise ValueError("alignment window must be at least min_trials")
        return self


class TrainConfig(_Strict):
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    batch_size: int = Field(128, ge=1)
    epochs: int = Field(100, ge=0)
    dataset_size: int = Field(100_000, ge=1)
    spsa_samples: int = Field(8, ge=1)
    spsa_sigma: float = Field(0.1, gt=0.0)
    hidden: int = Field(64, ge=1)
    params_path: Optional[str] = None


class OutputConfig(_Strict):
    out_dir: Optional[str] = None
    heatmap: bool = False
    trace_counts: bool = False


class ExperimentConfig(_Strict):
    name: str = "experiment"
    code: CodeConfig = Field(default_factory=CodeConfig)
    mismatch: Optional[MismatchConfig] = None
    shots: ShotsConfig = Field(default_factory=ShotsConfig)
    reweight: ReweightPolicy = Field(default_factory=ReweightPolicy)
    train: Optional[TrainConfig] = None
    arms: list[str] = Field(default_factory=lambda: ["oracle", "mismatched", "aligned"])
    seed: int = Field(default_factory=lambda: settings.seed)
    jobs: int = Field(default_factory=lambda: settings.jobs, ge=1)
    output: OutputConfig = Field(default_factory=OutputConfig)

    @field_validator("arms")
    @classmethod
    def _known_arms(cls, arms: list[str]) -> list[str]:
        unknown = [a for a in arms if a not in ARMS]
        if unknown:
            raise ValueError(f"unknown arms {unknown}; choose from {list(ARMS)}")
        if not arms:
            raise ValueError("at least one arm is required")
        return arms

    def with_axis(self, axis: str, value: Union[int, float]) -> "ExperimentConfig":
        if axis == "p":
            update: dict[str, Any] = {"code": self.code.model_copy(update={"p": float(value)})}
        elif axis == "d":
            update = {"code": self.code.model_copy(update={"distance": int(value)})}
        elif axis == "N":
            base = self.mismatch or MismatchConfig()
            update = {"mismatch": base.model_copy(update={"strength": float(value)})}
        elif axis == "T_trace":
            update = {"shots": self.shots.model_copy(update={"trace": int(value)})}
        else:
            raise ConfigError(f"unknown sweep axis {axis!r}; choose from {list(SWEEP_AXES)}")
        return self.model_copy(update=update)


def parse_config(data: Any) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data or {})
    except ValidationError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            data = yaml.safe_load(handle)
    except FileNotFoundError:
        raise ConfigError(f"config file {str(path)!r} not found") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {str(path)!r} is not valid YAML: {exc}") from None
    return parse_config(data)


def config_hash(config: ExperimentConfig) -> str:
    return hashlib.sha256(config.model_dump_json().encode("utf-8")).hexdigest()[:16]
