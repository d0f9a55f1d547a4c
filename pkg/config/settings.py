import itertools
from enum import Enum
from typing import Any, Dict, Iterable, List, Optional, TextIO, Tuple, Type, TypeVar

from pydantic import AliasChoices, BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings

from core.errors import ConfigError


class AppSettings(BaseSettings):
    """Process-wide settings for the parasent tools."""

    model_config = {
        "env_file": ".env",
        "env_file_encoding": "utf-8",
        "extra": "ignore"  # Allow extra fields from .env
    }

    # Logging / progress
    log_level: str = Field(default="INFO", validation_alias=AliasChoices("PARASENT_LOG_LEVEL", "log_level"))
    show_progress: bool = Field(default=True, validation_alias=AliasChoices("PARASENT_SHOW_PROGRESS", "show_progress"))

    # Text handling
    lowercase: bool = Field(default=True, validation_alias=AliasChoices("PARASENT_LOWERCASE", "lowercase"))
    unk_strategy: str = Field(default="mean", validation_alias=AliasChoices("PARASENT_UNK_STRATEGY", "unk_strategy"))
    unk_token: str = Field(default="<unk>", validation_alias=AliasChoices("PARASENT_UNK_TOKEN", "unk_token"))

    default_seed: int = Field(default=1234, validation_alias=AliasChoices("PARASENT_SEED", "default_seed"))

    @field_validator("unk_strategy")
    @classmethod
    def _known_unk_strategy(cls, value: str) -> str:
        if value not in ("mean", "zero"):
            raise ValueError("unk_strategy must be 'mean' or 'zero'")
        return value


_config: Optional[AppSettings] = None


def get_config() -> AppSettings:
    """Get the global settings instance."""
    global _config
    if _config is None:
        _config = AppSettings()
    return _config


class Sampling(str, Enum):
    MAX = "max"
    MIX = "mix"


class OptimizerName(str, Enum):
    ADAGRAD = "adagrad"
    ADAM = "adam"


class Activation(str, Enum):
    TANH = "tanh"
    RELU = "relu"


class Arch(str, Enum):
    AVERAGE = "average"
    PROJ = "proj"
    DAN = "dan"
    RNN = "rnn"
    IRNN = "irnn"
    LSTM = "lstm"


class Task(str, Enum):
    SIMILARITY = "similarity"
    ENTAILMENT = "entailment"
    SENTIMENT = "sentiment"


class TrainMode(str, Enum):
    SCRATCH = "scratch"
    UNIVERSAL = "universal"
    FROZEN = "frozen"


class TrainConfig(BaseModel):
    """Hyperparameters of paraphrase-pair training.

    Defaults are the settings used for the released averaging model:
    margin 0.4, batches of 100, MAX sampling, AdaGrad at 0.05 with clipping.
    """

    model_config = ConfigDict(extra="forbid", use_enum_values=False)

    delta: float = 0.4
    lambda_c: float = 1e-6
    lambda_w: float = 1e-7
    batch_size: int = 100
    sampling: Sampling = Sampling.MAX
    optimizer: OptimizerName = OptimizerName.ADAGRAD
    learning_rate: float = 0.05
    clip_gradients: bool = True
    clip_threshold: float = 1.0
    update_embeddings: bool = True
    epochs: int = 10
    seed: int = 1234
    show_progress: bool = False

    @field_validator("delta", "clip_threshold")
    @classmethod
    def _positive(cls, value: float) -> float:
        if not value > 0:
            raise ValueError("must be > 0")
        return value

    @field_validator("lambda_c", "lambda_w", "learning_rate")
    @classmethod
    def _nonnegative(cls, value: float) -> float:
        if value < 0:
            raise ValueError("must be >= 0")
        return value

    @field_validator("batch_size")
    @classmethod
    def _batch_has_negatives(cls, value: int) -> int:
        if value < 2:
            raise ValueError("batch_size must be >= 2 so every pair has an in-batch negative")
        return value

    @field_validator("epochs")
    @classmethod
    def _epochs(cls, value: int) -> int:
        if value < 0:
            raise ValueError("epochs must be >= 0")
        return value


class ModelConfig(BaseModel):
    """Which encoder to build and how."""

    model_config = ConfigDict(extra="forbid")

    arch: Arch = Arch.AVERAGE
    out_dim: Optional[int] = None
    activation: Activation = Activation.TANH
    layers: int = 1
    output_gate: bool = True

    @field_validator("layers")
    @classmethod
    def _dan_depth(cls, value: int) -> int:
        if value not in (1, 2):
            raise ValueError("layers must be 1 or 2")
        return value

    @field_validator("out_dim")
    @classmethod
    def _out_dim(cls, value: Optional[int]) -> Optional[int]:
        if value is not None and value <= 0:
            raise ValueError("out_dim must be positive")
        return value


class SupervisedConfig(BaseModel):
    """Hyperparameters for the supervised task heads."""

    model_config = ConfigDict(extra="forbid")

    task: Task = Task.SIMILARITY
    mode: TrainMode = TrainMode.SCRATCH
    lambda_s: float = 1e-5
    lambda_w: float = 1e-6
    lambda_c: float = 1e-5
    hidden_dim: int = 150
    num_scores: int = 5
    batch_size: int = 25
    optimizer: OptimizerName = OptimizerName.ADAGRAD
    learning_rate: float = 0.05
    clip_gradients: bool = False
    clip_threshold: float = 1.0
    epochs: int = 10
    seed: int = 1234
    show_progress: bool = False

    @field_validator("lambda_s", "lambda_w", "lambda_c", "learning_rate")
    @classmethod
    def _nonnegative(cls, value: float) -> float:
        if value < 0:
            raise ValueError("must be >= 0")
        return value

    @field_validator("hidden_dim", "batch_size", "clip_threshold")
    @classmethod
    def _positive(cls, value):
        if not value > 0:
            raise ValueError("must be > 0")
        return value

    @model_validator(mode="after")
    def _scores(self) -> "SupervisedConfig":
        if self.num_scores < 2:
            raise ValueError("num_scores must be >= 2")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        return self


M = TypeVar("M", bound=BaseModel)


def build_config(model: Type[M], *layers: Dict[str, Any]) -> M:
    """Merge override layers left to right (later wins) over the model defaults.

    ``None`` values are treated as "not given" so unset CLI flags fall through.
    """
    merged: Dict[str, Any] = {}
    for layer in layers:
        merged.update({k: v for k, v in layer.items() if v is not None})
    try:
        return model.model_validate(merged)
    except ValidationError as e:
        raise ConfigError(f"invalid {model.__name__}: {e}") from e


def parse_key_values(reader: Iterable[str], source: str = "config") -> Dict[str, str]:
    """Parse ``key=value`` lines; ``#`` starts a comment, blank lines are ignored."""
    values: Dict[str, str] = {}
    for line_no, raw in enumerate(reader, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source} line {line_no}: expected key=value, got {raw.rstrip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source} line {line_no}: empty key")
        values[key] = value
    return values


def parse_grid(reader: TextIO) -> List[Tuple[str, List[str]]]:
    """Parse a sweep grid: ``key=v1,v2,...`` per line, keeping file order."""
    grid: List[Tuple[str, List[str]]] = []
    for key, value in parse_key_values(reader, source="grid").items():
        options = [v.strip() for v in value.split(",") if v.strip()]
        if not options:
            raise ConfigError(f"grid key {key!r} has no values")
        grid.append((key, options))
    return grid


def expand_grid(grid: List[Tuple[str, List[str]]]) -> List[Dict[str, str]]:
    """Cartesian product of the grid, first-listed values first."""
    keys = [key for key, _ in grid]
    return [dict(zip(keys, combo)) for combo in itertools.product(*(options for _, options in grid))]


def split_overrides(values: Dict[str, str]) -> Tuple[Dict[str, str], Dict[str, str]]:
    """Route keys to TrainConfig or ModelConfig; anything else is an error."""
    train_keys = set(TrainConfig.model_fields)
    model_keys = set(ModelConfig.model_fields)
    train: Dict[str, str] = {}
    model: Dict[str, str] = {}
    for key, value in values.items():
        if key in train_keys:
            train[key] = value
        elif key in model_keys:
            model[key] = value
        else:
            raise ConfigError(f"unknown configuration key {key!r}")
    return train, model
