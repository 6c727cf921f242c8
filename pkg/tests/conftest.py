"""Shared fixtures: a tiny model config, a small corpus and a face basis."""

import json
from collections.abc import Callable, Sequence

import numpy as np
import pytest
import torch

from stylemotion.config import RunConfig, from_dict
from stylemotion.core import FaceBasis, FaceSplit
from stylemotion.synth_data import SyntheticCorpus, gen_basis, gen_corpus

TINY = {
    "model": {
        "style_dim": 8,
        "style_layers": 1,
        "style_heads": 2,
        "style_ffn_dim": 16,
        "audio_dim": 8,
        "audio_layers": 1,
        "audio_heads": 2,
        "audio_ffn_dim": 16,
        "vocab_size": 6,
        "window": 1,
        "decoder_blocks": 1,
        "decoder_heads": 2,
        "decoder_ffn_dim": 16,
        "num_kernels": 2,
    },
    "train": {
        "clip_length": 8,
        "batch_size": 2,
        "steps": 3,
        "learning_rate": 1e-3,
        "log_every": 1,
    },
    "discriminator": {
        "embed_dim": 8,
        "width": 4,
        "steps": 5,
        "batch_size": 8,
        "learning_rate": 1e-3,
        "holdout_fraction": 0.25,
    },
    "data": {"styles": 2, "clips_per_style": 4, "vertices": 64},
}


def tiny_config(**sections: dict) -> RunConfig:
    """The tiny config with some sections updated."""
    data = {name: dict(values) for name, values in TINY.items()}
    for name, values in sections.items():
        data.setdefault(name, {}).update(values)
    return from_dict(data)


@pytest.fixture
def config() -> RunConfig:
    return tiny_config()


@pytest.fixture
def config64() -> RunConfig:
    return tiny_config(train={"precision": "float64"})


@pytest.fixture
def split() -> FaceSplit:
    return FaceSplit.default()


@pytest.fixture(scope="session")
def basis() -> FaceBasis:
    return gen_basis(0, 64)


@pytest.fixture(scope="session")
def corpus() -> SyntheticCorpus:
    return gen_corpus(0, n_styles=2, clips_per_style=4, length=8, vocab=6)


def _agrees(exact: float, numeric: float, rtol: float, atol: float) -> bool:
    return abs(exact - numeric) <= rtol * max(abs(exact), abs(numeric)) + atol


def finite_difference_agreement(
    loss_fn: Callable[[], torch.Tensor],
    parameters: Sequence[torch.Tensor],
    samples: int = 60,
    eps: float = 1e-5,
    rtol: float = 1e-4,
    atol: float = 1e-7,
    seed: int = 0,
) -> float:
    """Share of sampled parameter entries where autograd matches central differences.

    `loss_fn` must be deterministic and evaluated in float64.
    """
    parameters = [p for p in parameters if p.requires_grad]
    for p in parameters:
        p.grad = None
    loss_fn().backward()
    analytic = [
        p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)
        for p in parameters
    ]
    sizes = np.array([p.numel() for p in parameters])
    rng = np.random.default_rng(seed)
    picks = rng.choice(sizes.sum(), size=min(samples, sizes.sum()), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    agree = 0
    with torch.no_grad():
        for flat in picks:
            i = int(np.searchsorted(offsets, flat, side="right") - 1)
            entry = parameters[i].view(-1)
            j = int(flat - offsets[i])
            original = entry[j].item()
            entry[j] = original + eps
            upper = loss_fn().item()
            entry[j] = original - eps
            lower = loss_fn().item()
            entry[j] = original
            numeric = (upper - lower) / (2 * eps)
            exact = analytic[i].view(-1)[j].item()
            agree += _agrees(exact, numeric, rtol, atol)
    return agree / len(picks)


@pytest.fixture
def fd_agreement() -> Callable[..., float]:
    return finite_difference_agreement


@pytest.fixture
def make_config() -> Callable[..., RunConfig]:
    return tiny_config


@pytest.fixture(scope="session")
def tiny_args() -> list[str]:
    """The tiny config as `--set` command line overrides."""
    args = []
    for section, values in TINY.items():
        for key, value in values.items():
            args += ["--set", f"{section}.{key}={json.dumps(value)}"]
    return args
