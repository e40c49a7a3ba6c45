from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict
from dotenv import dotenv_values
from typing import List, Literal, Optional, Tuple
import os

from .exceptions import ConfigError
from .schemas.network import DEFAULT_ANCHORS, NetworkConfig, Profile
from .schemas.training import TrainConfig


class Settings(BaseSettings):
    # Application
    APP_NAME: str = "Ocular Region Detector"
    APP_VERSION: str = "1.0.0"
    LOG_LEVEL: str = "INFO"

    # Detection head
    CONF_THRESHOLD: float = 0.25
    EVAL_CONF_THRESHOLD: float = 0.005  # low so that AP sweeps the full PR curve
    NMS_IOU_THRESHOLD: float = 0.45

    # Evaluation
    MATCH_IOU_THRESHOLD: float = 0.5
    FSCORE_CONF_THRESHOLD: float = 0.25
    AP_METHOD: Literal["all_point", "eleven_point"] = "all_point"

    # Statistics
    SIGNIFICANCE_LEVEL: float = 0.05
    EXACT_MAX_N: int = 25

    @field_validator("LOG_LEVEL", mode="before")
    @classmethod
    def parse_log_level(cls, v):
        return str(v).upper()

    model_config = SettingsConfigDict(
        env_prefix="OCULAR_",
        env_file=".env",
        case_sensitive=True,
        extra="ignore",
    )


class ExperimentConfig(BaseModel):
    """Flat key=value experiment file: every key optional"""
    model_config = ConfigDict(extra="forbid")

    epochs: int = Field(200, ge=1)
    batch_size: int = Field(8, ge=1)
    learning_rate: float = Field(1e-3, ge=0.0)
    momentum: float = Field(0.9, ge=0.0, lt=1.0)
    weight_decay: float = Field(5e-4, ge=0.0)
    lambda_coord: float = Field(5.0, ge=0.0)
    lambda_noobj: float = Field(0.5, ge=0.0)
    seed: int = Field(7, ge=0)
    profile: Profile = Profile.FULL
    num_anchors: int = Field(5, ge=1)
    input_channels: int = 3
    input_size: Optional[int] = None
    anchors: Optional[List[Tuple[float, float]]] = None
    leaky_slope: float = Field(0.1, gt=0.0, lt=1.0)

    @field_validator("input_channels")
    @classmethod
    def check_channels(cls, v):
        if v not in (1, 3):
            raise ValueError(f"input_channels must be 1 or 3, got {v}")
        return v

    @field_validator("anchors", mode="before")
    @classmethod
    def parse_anchors(cls, v):
        if v is None or not isinstance(v, str):
            return v
        pairs = []
        for token in v.split():
            pw, ph = token.split(",")
            pairs.append((float(pw), float(ph)))
        return pairs

    def resolved_input_size(self) -> int:
        if self.input_size is not None:
            return self.input_size
        return 160 if self.profile == Profile.TINY else 416

    def network_config(self, num_classes: int) -> NetworkConfig:
        anchors = self.anchors
        if anchors is None:
            anchors = list(DEFAULT_ANCHORS[: self.num_anchors])
        try:
            return NetworkConfig(
                num_classes=num_classes,
                num_anchors=self.num_anchors,
                input_channels=self.input_channels,
                input_size=self.resolved_input_size(),
                anchor_priors=anchors,
                profile=self.profile,
                leaky_slope=self.leaky_slope,
            )
        except ValidationError as e:
            raise ConfigError(f"invalid network configuration: {e}") from e

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            lambda_coord=self.lambda_coord,
            lambda_noobj=self.lambda_noobj,
            seed=self.seed,
            profile=self.profile,
        )


def load_experiment_config(path: Optional[str] = None) -> ExperimentConfig:
    """Read a key=value config file; None yields all defaults"""
    if path is None:
        return ExperimentConfig()
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")

    values = {k: v for k, v in dotenv_values(path).items() if v is not None and v != ""}
    try:
        return ExperimentConfig(**values)
    except ValidationError as e:
        raise ConfigError(f"invalid config file {path}: {e}") from e


# Create settings instance
settings = Settings()
