"""Process settings from the environment and the JSON run configuration."""
import json
import os
from pathlib import Path
from typing import List, Optional, Union

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, ValidationInfo, field_validator, model_validator

from ltcnn.augment import AugmentSettings, normalize_ops
from ltcnn.errors import ConfigError
from ltcnn.network import NetworkSpec
from ltcnn.train import TrainConfig

load_dotenv()

DEFAULT_HOST = "127.0.0.1"
DEFAULT_PORT = 8766


class Settings:
    """Process-level knobs read from LTCNN_* environment variables (and an optional .env)."""

    def __init__(self):
        self.threads = self._int_var("LTCNN_THREADS", min(4, os.cpu_count() or 1))
        self.log_level = os.getenv("LTCNN_LOG_LEVEL")
        self.log_json = os.getenv("LTCNN_LOG_JSON", "0").strip().lower() in ("1", "true", "yes")
        self.checkpoint = os.getenv("LTCNN_CHECKPOINT") or None
        self.host = os.getenv("LTCNN_HOST", DEFAULT_HOST)
        self.port = self._int_var("LTCNN_PORT", DEFAULT_PORT)
        self._validate_config()

    @staticmethod
    def _int_var(name: str, default: int) -> int:
        raw = os.getenv(name)
        if raw is None or raw.strip() == "":
            return default
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{name} must be an integer, got '{raw}'") from None

    def _validate_config(self):
        if self.threads < 1:
            raise ConfigError(f"LTCNN_THREADS must be >= 1, got {self.threads}")
        if not 0 < self.port < 65536:
            raise ConfigError(f"LTCNN_PORT must be a TCP port, got {self.port}")
        if self.log_level is not None and self.log_level.upper() not in ("DEBUG", "INFO", "WARNING", "ERROR"):
            raise ConfigError(f"LTCNN_LOG_LEVEL must be DEBUG, INFO, WARNING or ERROR, got '{self.log_level}'")


def get_settings() -> Settings:
    return Settings()


class NetworkSection(BaseModel):
    """NetworkSpec fields; class names come from the dataset unless pinned here."""

    model_config = ConfigDict(extra="forbid")

    input_channels: int = Field(3, ge=1)
    input_height: int = Field(224, ge=1)
    input_width: int = Field(224, ge=1)
    conv1_filters: int = Field(6, ge=1)
    conv2_filters: int = Field(16, ge=1)
    kernel: int = Field(5, ge=1)
    fc1: int = Field(120, ge=1)
    fc2: int = Field(84, ge=1)
    dropout_rate: float = Field(0.2, ge=0.0, lt=1.0)
    fc_activation: bool = False
    n_classes: Optional[int] = Field(None, ge=2)
    class_names: Optional[List[str]] = None

    def to_spec(self, class_names: Optional[List[str]] = None) -> NetworkSpec:
        names = class_names if class_names is not None else self.class_names
        if names is None:
            raise ConfigError("network.class_names is required when no dataset provides the classes")
        if self.class_names is not None and list(self.class_names) != list(names):
            raise ConfigError(f"network.class_names {self.class_names} do not match dataset classes {names}")
        if self.n_classes is not None and self.n_classes != len(names):
            raise ConfigError(f"network.n_classes is {self.n_classes} but the dataset has {len(names)} classes")
        fields = self.model_dump(exclude={"n_classes", "class_names"})
        return NetworkSpec.for_classes(list(names), **fields)


def _resolve(path: Optional[Path], info: ValidationInfo) -> Optional[Path]:
    if path is None:
        return None
    base = (info.context or {}).get("base_dir")
    if base is not None and not path.is_absolute():
        path = Path(base) / path
    return path.resolve()


class DataSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    root: Path
    val_root: Optional[Path] = None
    split_ratio: Optional[float] = Field(None, gt=0, lt=1)
    augment_ops: Optional[List[str]] = None
    augment: AugmentSettings = AugmentSettings()
    workers: Optional[int] = Field(None, ge=1)

    @field_validator("root", "val_root")
    @classmethod
    def _must_exist(cls, value: Optional[Path], info: ValidationInfo) -> Optional[Path]:
        value = _resolve(value, info)
        if value is not None and not value.is_dir():
            raise ValueError(f"directory '{value}' does not exist")
        return value

    @field_validator("augment_ops")
    @classmethod
    def _known_ops(cls, value: Optional[List[str]]) -> Optional[List[str]]:
        if value is None:
            return None
        return list(normalize_ops(value))

    @model_validator(mode="after")
    def _one_validation_source(self) -> "DataSection":
        if self.val_root is not None and self.split_ratio is not None:
            raise ValueError("set either val_root or split_ratio, not both")
        return self


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    network: NetworkSection = NetworkSection()
    train: TrainConfig
    data: DataSection
    output_dir: Path

    @field_validator("output_dir")
    @classmethod
    def _resolve_output(cls, value: Path, info: ValidationInfo) -> Path:
        return _resolve(value, info)


def format_validation_error(error: ValidationError) -> str:
    lines = []
    for item in error.errors():
        where = ".".join(str(part) for part in item["loc"]) or "<root>"
        lines.append(f"{where}: {item['msg']}")
    return "invalid run config:\n  " + "\n  ".join(lines)


def parse_run_config(data: dict, base_dir: Union[str, Path, None] = None) -> RunConfig:
    try:
        return RunConfig.model_validate(data, context={"base_dir": base_dir})
    except ValidationError as e:
        raise ConfigError(format_validation_error(e)) from e


def load_run_config(path: Union[str, Path]) -> RunConfig:
    """Read and validate a run config; relative paths resolve against the config's directory."""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file '{path}' does not exist") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file '{path}' is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"config file '{path}' must hold a JSON object")
    return parse_run_config(data, base_dir=path.parent)


def dump_resolved(cfg: RunConfig) -> str:
    """Every default materialized; valid input to load_run_config."""
    return json.dumps(cfg.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"
