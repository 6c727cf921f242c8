"""Audio encoder: phoneme windows to articulation features."""

import logging
from collections.abc import Sequence

import numpy as np
import torch
from torch import nn

from stylemotion.errors import ContractError, VocabularyError
from stylemotion.layers import PositionalEncoding, transformer_encoder

logger = logging.getLogger("stylemotion")

# 40 phonemes, silence and 3 reserved labels.
DEFAULT_VOCAB_SIZE = 44


class AudioEncoder(nn.Module):
    def __init__(
        self,
        vocab_size: int = DEFAULT_VOCAB_SIZE,
        feature_dim: int = 256,
        num_layers: int = 2,
        heads: int = 4,
        ffn_dim: int = 1024,
        dropout: float = 0.0,
    ) -> None:
        super().__init__()
        self.vocab_size = vocab_size
        self.feature_dim = feature_dim
        self.embedding = nn.Embedding(vocab_size, feature_dim)
        self.positional = PositionalEncoding(feature_dim)
        self.encoder = transformer_encoder(
            feature_dim, heads, ffn_dim, num_layers, dropout
        )

    def check_labels(self, windows: torch.Tensor) -> None:
        if windows.numel() and (
            int(windows.min()) < 0 or int(windows.max()) >= self.vocab_size
        ):
            message = (
                f"Phoneme labels must lie in [0, {self.vocab_size}), got range "
                f"[{int(windows.min())}, {int(windows.max())}]."
            )
            raise VocabularyError(message)

    def forward(self, windows: torch.Tensor) -> torch.Tensor:
        """Encode (..., 2w+1) label windows into (..., 2w+1, feature_dim) features."""
        if windows.ndim < 1 or windows.shape[-1] < 1:
            raise ContractError("Phoneme window must contain at least one label.")
        self.check_labels(windows)
        lead = windows.shape[:-1]
        flat = windows.reshape(-1, windows.shape[-1])
        features = self.encoder(self.positional(self.embedding(flat)))
        return features.reshape(*lead, windows.shape[-1], self.feature_dim)


@torch.no_grad()
def encode_audio(window: Sequence[int], encoder: AudioEncoder) -> np.ndarray:
    """Articulation features of one phoneme window, shape (2w+1, feature_dim)."""
    labels = torch.as_tensor(np.asarray(window, dtype=np.int64).reshape(-1))
    return encoder(labels).cpu().numpy()
