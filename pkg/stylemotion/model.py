"""The generator: audio encoder, style encoder and the two face-half decoders."""

import logging

import numpy as np
import torch
from torch import nn

from stylemotion.audio_encoder import AudioEncoder
from stylemotion.config import ModelConfig
from stylemotion.core import (
    LOWER_FACE_DIM,
    UPPER_FACE_DIM,
    FaceSplit,
    MotionSequence,
    PhonemeSequence,
)
from stylemotion.dynamic_decoder import StyleDecoder, decode_sequence
from stylemotion.errors import ContractError
from stylemotion.style_encoder import StyleCode, StyleEncoder

logger = logging.getLogger("stylemotion")


class MotionGenerator(nn.Module):
    def __init__(self, config: ModelConfig, split: FaceSplit) -> None:
        super().__init__()
        self.config = config
        self.split = split
        self.half_width = config.window
        self.audio_encoder = AudioEncoder(
            vocab_size=config.vocab_size,
            feature_dim=config.audio_dim,
            num_layers=config.audio_layers,
            heads=config.audio_heads,
            ffn_dim=config.audio_ffn_dim,
            dropout=config.dropout,
        )
        self.style_encoder = StyleEncoder(
            style_dim=config.style_dim,
            num_layers=config.style_layers,
            heads=config.style_heads,
            ffn_dim=config.style_ffn_dim,
            dropout=config.dropout,
        )
        self.lower_decoder = self._decoder(LOWER_FACE_DIM)
        self.upper_decoder = self._decoder(UPPER_FACE_DIM)

    def _decoder(self, group_size: int) -> StyleDecoder:
        return StyleDecoder(
            group_size,
            style_dim=self.config.style_dim,
            audio_dim=self.config.audio_dim,
            half_width=self.config.window,
            num_blocks=self.config.decoder_blocks,
            heads=self.config.decoder_heads,
            ffn_dim=self.config.decoder_ffn_dim,
            num_kernels=self.config.num_kernels,
            dynamic=self.config.dynamic_ffn,
            dropout=self.config.dropout,
        )

    def extract_style(self, style_ref: torch.Tensor) -> torch.Tensor:
        return self.style_encoder(style_ref)

    def decode(
        self,
        phonemes: torch.Tensor,
        style: torch.Tensor,
        queries: torch.Tensor | None = None,
    ) -> torch.Tensor:
        return decode_sequence(
            phonemes,
            style,
            self.audio_encoder,
            self.lower_decoder,
            self.upper_decoder,
            self.split,
            queries,
        )

    def forward(self, phonemes: torch.Tensor, style_ref: torch.Tensor) -> torch.Tensor:
        return self.decode(phonemes, self.extract_style(style_ref))


def build_generator(
    config: ModelConfig,
    split: FaceSplit,
    seed: int | None = None,
    dtype: torch.dtype = torch.float32,
) -> MotionGenerator:
    if seed is not None:
        torch.manual_seed(seed)
    return MotionGenerator(config, split).to(dtype)


def interpolate_styles(first: StyleCode, second: StyleCode, alpha: float) -> StyleCode:
    """Linear blend `(1 - alpha) * first + alpha * second`.

    Blending with a neutral style scales a style's intensity.
    """
    if not 0.0 <= alpha <= 1.0:
        message = f"alpha must lie in [0, 1], got {alpha}."
        raise ContractError(message)
    if len(first) != len(second):
        message = f"Style codes differ in dimension: {len(first)} vs {len(second)}."
        raise ContractError(message)
    return StyleCode((1.0 - alpha) * first.values + alpha * second.values)


@torch.no_grad()
def generate(
    phonemes: PhonemeSequence, style: StyleCode, generator: MotionGenerator
) -> MotionSequence:
    """Decode one phoneme stream with one style code."""
    if len(style) != generator.config.style_dim:
        expected = generator.config.style_dim
        message = f"Style code has {len(style)} values, expected {expected}."
        raise ContractError(message)
    reference = next(generator.parameters())
    labels = torch.from_numpy(phonemes.labels.copy()).to(reference.device)[None]
    generator.audio_encoder.check_labels(labels)
    code = style.tensor().to(reference)[None]
    frames = generator.decode(labels, code)[0]
    return MotionSequence(frames.cpu().numpy().astype(np.float32), fps=phonemes.fps)
