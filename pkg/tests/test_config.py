"""Test loading and validating the run configuration."""

import pytest

from stylemotion import config
from stylemotion.errors import ConfigError


def test_default_file_matches_dataclass_defaults():
    """The shipped toml and the dataclass defaults describe the same config."""
    assert config.load() == config.RunConfig()


def test_default_loss_weights():
    """Reconstruction dominates the objective."""
    weights = config.load().loss
    assert (weights.rec, weights.trip, weights.sync, weights.tem, weights.style) == (
        88.0,
        1.0,
        1.0,
        1.0,
        1.0,
    )
    assert weights.mu == 0.1
    assert weights.gamma == 5.0


def test_user_file_overrides_defaults(tmp_path):
    """A user file replaces only the keys it names."""
    path = tmp_path / "user.toml"
    text = "[train]\nsteps = 12\n\n[model]\nnum_kernels = 4\n"
    path.write_text(text, encoding="utf-8")
    loaded = config.load(path)
    assert loaded.train.steps == 12
    assert loaded.model.num_kernels == 4
    assert loaded.train.batch_size == 8


def test_override_keeps_toml_types():
    """Command line overrides parse as TOML literals."""
    loaded = config.load(
        overrides=[
            "train.learning_rate=1e-3",
            "model.dynamic_ffn=false",
            "train.betas=[0.5, 0.9]",
            "train.precision=float64",
        ]
    )
    assert loaded.train.learning_rate == 1e-3
    assert loaded.model.dynamic_ffn is False
    assert loaded.train.betas == (0.5, 0.9)
    assert loaded.train.precision == "float64"


def test_overrides_apply_in_order():
    loaded = config.load(overrides=["train.steps=1", "train.steps=2"])
    assert loaded.train.steps == 2


@pytest.mark.parametrize(
    ("override", "match"),
    [
        ("train.nope=1", "train.nope"),
        ("nope.steps=1", "nope"),
        ("train.steps", "section.key=value"),
        ("steps=1", "section.key=value"),
        ("train.steps=many", "integer"),
        ("model.dynamic_ffn=1", "boolean"),
        ("train.precision=float16", "precision"),
        ("loss.rec=-1.0", "non-negative"),
    ],
)
def test_invalid_overrides(override, match):
    """Unknown keys and bad values are rejected by name."""
    with pytest.raises(ConfigError, match=match):
        config.load(overrides=[override])


def test_unknown_key_in_file(tmp_path):
    path = tmp_path / "user.toml"
    path.write_text("[data]\ncolour = 3\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="data.colour"):
        config.load(path)


def test_broken_file(tmp_path):
    path = tmp_path / "user.toml"
    path.write_text("[train\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="Could not parse"):
        config.load(path)


def test_clip_length_must_cover_window():
    """Clips must be at least one phoneme window long."""
    with pytest.raises(ConfigError, match="clip_length"):
        config.load(overrides=["model.window=5", "train.clip_length=10"])


def test_heads_must_divide_width():
    with pytest.raises(ConfigError, match="style_heads"):
        config.load(overrides=["model.style_heads=3"])


def test_from_dict_round_trips_to_dict():
    """A config echoed as a dict rebuilds the same config."""
    loaded = config.load(overrides=["model.num_kernels=16", "data.styles=3"])
    assert config.from_dict(loaded.to_dict()) == loaded
