#!/usr/bin/env python3
"""
Pydantic Models for the NZip codec
"I'm learnding!" - Ralph Wiggum

Configuration records for the compression networks, the loss weights, the
task heads, training and rate-distortion sweeps, plus the named presets and
the flat key=value config file reader.
"""

import logging
import math
import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, Field, ValidationError, field_validator

from errors import ConfigError

logger = logging.getLogger(__name__)

DOWNSAMPLE_FACTOR = 16
KNOWN_TASKS = ("class", "family")


class CodecConfig(BaseModel):
    """Widths and entropy-model constants of the four compression networks"""
    latent_channels: int = Field(default=32, ge=1, le=1024, description="C_z, channels of the latent z")
    hidden_channels: Optional[int] = Field(
        default=None, ge=1, le=1024,
        description="Width of the encoder/decoder inner layers (defaults to latent_channels)"
    )
    hyper_channels: int = Field(default=32, ge=1, le=1024, description="Channels of the hyper-latent w")
    hyper_activation: Literal["leaky_relu", "relu"] = Field(
        default="leaky_relu", description="Activation between hyper-network convolutions"
    )
    sigma_min: float = Field(default=0.05, gt=0.0, description="Floor of the predicted Gaussian scale")
    precision: int = Field(default=16, ge=8, le=24, description="CDF table precision P (counts sum to 2^P)")
    tail_mass: float = Field(default=2.0 ** -16, gt=0.0, lt=0.5, description="Model mass allowed outside a window")
    t_max: int = Field(default=64, ge=0, le=100, description="Largest half-width of a symbol window")

    class Config:
        extra = "forbid"
        json_schema_extra = {
            "example": {
                "latent_channels": 32,
                "hyper_channels": 32,
                "hyper_activation": "leaky_relu",
                "sigma_min": 0.05,
                "precision": 16,
            }
        }

    @property
    def downsample_factor(self) -> int:
        return DOWNSAMPLE_FACTOR

    @property
    def inner_channels(self) -> int:
        return self.hidden_channels or self.latent_channels

    @property
    def hyper_decoder_widths(self) -> List[int]:
        """Widths of the three transposed stages; the last carries [mu || raw sigma]"""
        c = self.latent_channels
        return [c, int(math.ceil(1.5 * c)), 2 * c]


class LossWeights(BaseModel):
    """Lagrange weights of the rate-distortion-utility objective"""
    lambda_d: float = Field(
        default=3.0e7, ge=0.0,
        description="Weight of the MSE distortion term; rates are summed over the batch, so this scales with batch pixels"
    )
    lambda_t: Dict[str, float] = Field(
        default_factory=dict, description="Per-task weight of the task loss, keyed by task id"
    )

    class Config:
        extra = "forbid"
        json_schema_extra = {"example": {"lambda_d": 30000000.0, "lambda_t": {"class": 1000.0}}}

    @field_validator("lambda_t")
    @classmethod
    def _non_negative(cls, value: Dict[str, float]) -> Dict[str, float]:
        for task, weight in value.items():
            if weight < 0:
                raise ValueError(f"lambda_t[{task}] must be >= 0, got {weight}")
        return value

    @property
    def active_tasks(self) -> List[str]:
        return sorted(task for task, weight in self.lambda_t.items() if weight > 0)


class StemConfig(BaseModel):
    """Adapter that lifts the latent to the classifier trunk"""
    variant: Literal["subpixel", "truncated"] = Field(default="subpixel", description="Stem family")
    pixel_shuffle_blocks: Literal[1, 2] = Field(
        default=2, description="Two x2 pixel-shuffle blocks or a single x4 block"
    )
    use_residual_block: bool = Field(default=True, description="Add the residual 3x3 path to the stem")
    activation: Literal["relu", "mish", "silu"] = Field(default="mish", description="Stem activation")

    class Config:
        extra = "forbid"
        json_schema_extra = {
            "example": {"variant": "subpixel", "pixel_shuffle_blocks": 2, "use_residual_block": True, "activation": "mish"}
        }

    @property
    def upsample(self) -> int:
        return 4 if self.variant == "subpixel" else 1


class HeadConfig(BaseModel):
    """Classifier reading the latent directly"""
    stem: StemConfig = Field(default_factory=StemConfig)
    trunk_width: int = Field(default=64, ge=1, le=1024, description="C_f, width of the residual trunk")
    trunk_blocks: int = Field(default=4, ge=0, le=16, description="Residual blocks in the trunk")
    num_classes: int = Field(default=4, ge=2, description="K, number of output classes")

    class Config:
        extra = "forbid"


class TrainConfig(BaseModel):
    """Everything a training run needs besides the data it generates itself"""
    codec: CodecConfig = Field(default_factory=CodecConfig)
    weights: LossWeights = Field(default_factory=LossWeights)
    head: HeadConfig = Field(default_factory=HeadConfig)
    learning_rate: float = Field(default=5e-5, gt=0.0, description="Initial Adam learning rate")
    lr_decay_every: Optional[int] = Field(default=None, ge=1, description="Epochs between step decays")
    lr_decay_gamma: float = Field(default=0.5, gt=0.0, le=1.0, description="Multiplier applied at each decay")
    epochs: int = Field(default=10, ge=1)
    recon_batch_size: int = Field(default=32, ge=1, description="Images per reconstruction batch")
    task_batch_size: int = Field(default=8, ge=1, description="Images per task batch")
    image_size: int = Field(default=32, ge=16, description="Side of the square synthetic images")
    num_classes: int = Field(default=4, ge=2, description="K classes in the synthetic corpus")
    train_samples: int = Field(default=256, ge=1)
    holdout_samples: int = Field(default=64, ge=1)
    seed: int = Field(default=0, ge=0)

    class Config:
        extra = "forbid"
        json_schema_extra = {
            "example": {
                "codec": {"latent_channels": 32},
                "weights": {"lambda_d": 30000000.0, "lambda_t": {"class": 1000.0}},
                "learning_rate": 0.001,
                "epochs": 10,
                "recon_batch_size": 32,
                "task_batch_size": 8,
                "seed": 0,
            }
        }

    @field_validator("image_size")
    @classmethod
    def _divisible(cls, value: int) -> int:
        if value % DOWNSAMPLE_FACTOR:
            raise ValueError(f"image_size must be a multiple of {DOWNSAMPLE_FACTOR}, got {value}")
        return value


class SweepConfig(BaseModel):
    """A rate-distortion sweep: one training run per lambda_d"""
    base: TrainConfig = Field(default_factory=TrainConfig)
    lambdas_d: List[float] = Field(..., min_length=1, description="Distortion weights to train")
    workers: int = Field(default=1, ge=1, description="Parallel training processes")

    class Config:
        extra = "forbid"

    @field_validator("lambdas_d")
    @classmethod
    def _positive(cls, value: List[float]) -> List[float]:
        if any(lam < 0 for lam in value):
            raise ValueError("lambda_d values must be >= 0")
        return sorted(value)


# Pre-built training presets
CONFIG_PRESETS: Dict[str, TrainConfig] = {
    "tiny": TrainConfig(
        codec=CodecConfig(latent_channels=8, hyper_channels=8, t_max=32),
        weights=LossWeights(lambda_d=1.0e6, lambda_t={"class": 30.0}),
        head=HeadConfig(trunk_width=16, trunk_blocks=1),
        learning_rate=1e-3,
        epochs=2,
        recon_batch_size=4,
        task_batch_size=2,
        image_size=16,
        train_samples=8,
        holdout_samples=4,
    ),
    "desk": TrainConfig(
        codec=CodecConfig(latent_channels=32, hyper_channels=32),
        weights=LossWeights(lambda_d=3.0e7, lambda_t={"class": 1000.0}),
        head=HeadConfig(trunk_width=64, trunk_blocks=4),
        learning_rate=1e-3,
        lr_decay_every=20,
        epochs=30,
        recon_batch_size=32,
        task_batch_size=8,
        image_size=32,
        train_samples=512,
        holdout_samples=128,
    ),
    "full": TrainConfig(
        codec=CodecConfig(latent_channels=256, hyper_channels=256),
        weights=LossWeights(lambda_d=100.0, lambda_t={"class": 10.0}),
        head=HeadConfig(trunk_width=64, trunk_blocks=4),
        learning_rate=5e-5,
        epochs=70,
        recon_batch_size=256,
        task_batch_size=72,
        image_size=256,
    ),
}


def create_train_config(preset: str = "desk", **overrides: Any) -> TrainConfig:
    """
    Build a TrainConfig from a named preset.

    Args:
        preset: "tiny", "desk" or "full"
        overrides: top-level fields to replace, or dotted keys given as
            {"codec.latent_channels": 16}

    Example:
        create_train_config("desk", epochs=5, seed=3)
    """
    if preset not in CONFIG_PRESETS:
        raise ConfigError(f"Unknown preset: {preset}. Available: {list(CONFIG_PRESETS.keys())}")
    data = CONFIG_PRESETS[preset].model_dump()
    for key, value in overrides.items():
        _set_dotted(data, key, value)
    return _validate(data)


# ============================================================================
# FLAT KEY=VALUE CONFIG FILES
# ============================================================================

def _set_dotted(data: Dict[str, Any], key: str, value: Any) -> None:
    parts = key.split(".")
    node = data
    for depth, part in enumerate(parts[:-1]):
        if part not in node or not isinstance(node[part], dict):
            raise ConfigError(f"Unknown config key: {key}")
        node = node[part]
        # lambda_t is an open mapping keyed by task id
        if part == "lambda_t":
            if depth != len(parts) - 2:
                raise ConfigError(f"Malformed task weight key: {key}")
            break
    else:
        if parts[-1] not in node:
            raise ConfigError(f"Unknown config key: {key}")
    node[parts[-1]] = value


def _validate(data: Dict[str, Any]) -> TrainConfig:
    try:
        return TrainConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration: {e}") from e


def parse_config_text(text: str) -> TrainConfig:
    """
    Parse `key = value` lines into a TrainConfig.

    Blank lines and `#` comments are skipped. A `preset` key picks the base
    preset (default "desk"); every other key is a dotted path into TrainConfig
    such as `codec.latent_channels` or `weights.lambda_t.class`.
    """
    pairs: List[tuple] = []
    preset = "desk"
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"Line {lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"Line {lineno}: empty key")
        if key == "preset":
            preset = value
        else:
            pairs.append((key, value))

    if preset not in CONFIG_PRESETS:
        raise ConfigError(f"Unknown preset: {preset}. Available: {list(CONFIG_PRESETS.keys())}")
    data = CONFIG_PRESETS[preset].model_dump()
    for key, value in pairs:
        _set_dotted(data, key, None if value.lower() in ("none", "null") else value)
    return _validate(data)


def load_config_file(path: Union[str, Path]) -> TrainConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"Cannot read config file {path}: {e}") from e
    config = parse_config_text(text)
    logger.info(f"📋 Loaded config from {path}")
    return config


# ============================================================================
# ENVIRONMENT
# ============================================================================

def worker_count() -> int:
    """NZIP_THREADS, the cap on parallel workers (default 1)"""
    raw = os.getenv("NZIP_THREADS", "1")
    try:
        value = int(raw)
    except ValueError:
        logger.warning(f"Ignoring non-integer NZIP_THREADS={raw!r}")
        return 1
    return max(value, 1)
