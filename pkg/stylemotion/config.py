"""Run configuration.

Defaults ship with the package in `config/default.toml`. A user file and `--set
section.key=value` overrides are merged over them, section by section; unknown
sections and keys are rejected.
"""

import logging
import os
import tomllib
from collections.abc import Iterable
from copy import deepcopy
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

from stylemotion.errors import ConfigError

logger = logging.getLogger("stylemotion")

DEFAULT_CONFIG_FILE = Path(__file__).parent / "config" / "default.toml"

PRECISIONS = ("float32", "float64")


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigError(message)


@dataclass(frozen=True)
class ModelConfig:
    style_dim: int = 256
    style_layers: int = 3
    style_heads: int = 4
    style_ffn_dim: int = 1024
    audio_dim: int = 256
    audio_layers: int = 2
    audio_heads: int = 4
    audio_ffn_dim: int = 1024
    vocab_size: int = 44
    window: int = 5
    decoder_blocks: int = 3
    decoder_heads: int = 4
    decoder_ffn_dim: int = 1024
    num_kernels: int = 8
    dynamic_ffn: bool = True
    dropout: float = 0.0

    def __post_init__(self) -> None:
        _require(self.style_dim % self.style_heads == 0, "style_dim % style_heads != 0")
        _require(self.audio_dim % self.audio_heads == 0, "audio_dim % audio_heads != 0")
        _require(
            self.style_dim % self.decoder_heads == 0, "style_dim % decoder_heads != 0"
        )
        _require(self.vocab_size >= 1, "vocab_size must be positive")
        _require(self.window >= 0, "window must be non-negative")
        _require(self.num_kernels >= 1, "num_kernels must be positive")
        _require(0.0 <= self.dropout < 1.0, "dropout must lie in [0, 1)")


@dataclass(frozen=True)
class LossWeights:
    rec: float = 88.0
    trip: float = 1.0
    sync: float = 1.0
    tem: float = 1.0
    style: float = 1.0
    mu: float = 0.1
    gamma: float = 5.0
    ssim_window: int = 7
    ssim_range: float = 6.0

    def __post_init__(self) -> None:
        for name in ("rec", "trip", "sync", "tem", "style", "gamma"):
            _require(getattr(self, name) >= 0, f"loss.{name} must be non-negative")
        _require(0.0 <= self.mu <= 1.0, "loss.mu must lie in [0, 1]")
        _require(self.ssim_window % 2 == 1, "loss.ssim_window must be odd")
        _require(self.ssim_range > 0, "loss.ssim_range must be positive")


@dataclass(frozen=True)
class TrainConfig:
    clip_length: int = 64
    batch_size: int = 8
    steps: int = 300
    learning_rate: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    precision: str = "float32"
    log_every: int = 10

    def __post_init__(self) -> None:
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        _require(len(self.betas) == 2, "train.betas needs two values")  # noqa: PLR2004
        _require(self.batch_size >= 1, "train.batch_size must be positive")
        _require(self.steps >= 0, "train.steps must be non-negative")
        _require(self.learning_rate > 0, "train.learning_rate must be positive")
        _require(
            self.precision in PRECISIONS, f"train.precision must be in {PRECISIONS}"
        )
        _require(self.log_every >= 1, "train.log_every must be positive")


@dataclass(frozen=True)
class DiscriminatorConfig:
    embed_dim: int = 128
    width: int = 64
    steps: int = 500
    batch_size: int = 64
    learning_rate: float = 1e-4
    holdout_fraction: float = 0.25

    def __post_init__(self) -> None:
        _require(self.embed_dim >= 1, "discriminator.embed_dim must be positive")
        _require(self.width >= 1, "discriminator.width must be positive")
        _require(self.batch_size >= 1, "discriminator.batch_size must be positive")
        _require(
            0.0 < self.holdout_fraction < 1.0,
            "discriminator.holdout_fraction must lie in (0, 1)",
        )


@dataclass(frozen=True)
class DataConfig:
    seed: int = 0
    styles: int = 4
    clips_per_style: int = 20
    vertices: int = 256
    noise_scale: float = 0.05
    mean_dwell: float = 4.0
    lower_indices: tuple[int, ...] = tuple(range(13))

    def __post_init__(self) -> None:
        object.__setattr__(self, "lower_indices", tuple(self.lower_indices))
        _require(self.noise_scale >= 0, "data.noise_scale must be non-negative")
        _require(self.mean_dwell >= 1, "data.mean_dwell must be at least one frame")


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    train: TrainConfig = field(default_factory=TrainConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def __post_init__(self) -> None:
        _require(
            self.train.clip_length >= 2 * self.model.window + 1,
            f"train.clip_length ({self.train.clip_length}) must be at least "
            f"2 * model.window + 1 ({2 * self.model.window + 1})",
        )

    def to_dict(self) -> dict[str, dict[str, Any]]:
        return asdict(self)


_SECTIONS = {
    "model": ModelConfig,
    "loss": LossWeights,
    "train": TrainConfig,
    "discriminator": DiscriminatorConfig,
    "data": DataConfig,
}


def _load_toml(file_path: str | os.PathLike) -> dict:
    """Load a toml file.

    Args:
        file_path: Path to the toml file.

    Returns:
        The parsed document.
    """
    try:
        with Path(file_path).open("rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        message = f"Could not parse config file {file_path}: {exc}"
        raise ConfigError(message) from exc


def _check_type(
    section: str,
    key: str,
    value: Any,  # noqa: ANN401
    default: Any,  # noqa: ANN401
) -> Any:  # noqa: ANN401
    name = f"{section}.{key}"
    if isinstance(default, bool):
        _require(isinstance(value, bool), f"{name} must be a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
        _require(ok, f"{name} must be an integer, got {value!r}")
        return value
    if isinstance(default, float):
        ok = isinstance(value, int | float) and not isinstance(value, bool)
        _require(ok, f"{name} must be a number, got {value!r}")
        return float(value)
    if isinstance(default, list | tuple):
        ok = isinstance(value, list | tuple)
        _require(ok, f"{name} must be a list, got {value!r}")
        return list(value)
    _require(isinstance(value, type(default)), f"{name} has wrong type: {value!r}")
    return value


def _update_sections(config: dict, update: dict, source: str) -> dict:
    for section, values in update.items():
        if section not in config:
            message = f"Unknown config section '{section}' in {source}."
            raise ConfigError(message)
        if not isinstance(values, dict):
            message = f"Config section '{section}' in {source} must be a table."
            raise ConfigError(message)
        for key, value in values.items():
            if key not in config[section]:
                message = f"Unknown config key '{section}.{key}' in {source}."
                raise ConfigError(message)
            config[section][key] = _check_type(
                section, key, value, config[section][key]
            )
    return config


def parse_override(item: str) -> dict:
    """Turn `section.key=value` into `{section: {key: value}}`.

    The value is read as a TOML literal, so `1e-3`, `true` and `[1, 2]` keep their
    types; anything else is taken as a plain string.
    """
    name, sep, raw = item.partition("=")
    section, dot, key = name.strip().partition(".")
    if not sep or not dot or not section or not key:
        message = f"Override '{item}' is not of the form section.key=value."
        raise ConfigError(message)
    try:
        value = tomllib.loads(f"value = {raw.strip()}")["value"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    return {section: {key: value}}


def from_dict(data: dict) -> RunConfig:
    merged = _update_sections(deepcopy(_load_toml(DEFAULT_CONFIG_FILE)), data, "dict")
    return RunConfig(**{name: cls(**merged[name]) for name, cls in _SECTIONS.items()})


def load(
    config_file: str | os.PathLike | None = None, overrides: Iterable[str] = ()
) -> RunConfig:
    """Load the default config, then apply a user file and overrides on top.

    Args:
        config_file: Optional user toml file.
        overrides: `section.key=value` strings, applied in order.

    Returns:
        The validated configuration.
    """
    config = _load_toml(DEFAULT_CONFIG_FILE)
    if config_file is not None:
        config = _update_sections(config, _load_toml(config_file), str(config_file))
        logger.debug("Loaded config from %s.", config_file)
    for item in overrides:
        config = _update_sections(config, parse_override(item), "--set")
        logger.debug("Applied override %s.", item)
    try:
        return RunConfig(
            **{name: cls(**config[name]) for name, cls in _SECTIONS.items()}
        )
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


if __name__ == "__main__":
    load()
