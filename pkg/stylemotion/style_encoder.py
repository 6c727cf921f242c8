"""Style encoder: expression motion in, style code out.

Every frame becomes a token, a transformer encoder mixes the tokens over time and a
self-attention pooling layer sums them with softmax weights scored by a learnable row
vector `W_s`:

    alpha = softmax(W_s H),   s = sum_i alpha_i H_i

Tokens are stored batch-first, `(B, N, d_s)`, so `H_i` is row `i`.
"""

import logging
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from stylemotion.core import EXPRESSION_DIM, MotionSequence
from stylemotion.errors import ContractError
from stylemotion.layers import PositionalEncoding, transformer_encoder

logger = logging.getLogger("stylemotion")


@dataclass(frozen=True, eq=False)
class StyleCode:
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64).reshape(-1)
        if values.size < 1 or not np.isfinite(values).all():
            raise ContractError("Style code must be a non-empty finite vector.")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.values.size

    def tensor(self) -> torch.Tensor:
        return torch.from_numpy(self.values.copy())


def _check_pooling_dims(tokens: torch.Tensor, pooling_weight: torch.Tensor) -> None:
    if tokens.ndim < 2 or tokens.shape[-2] < 1:  # noqa: PLR2004
        message = f"Expected at least one token, got token shape {tuple(tokens.shape)}."
        raise ContractError(message)
    if pooling_weight.numel() != tokens.shape[-1]:
        message = (
            f"Pooling weight has {pooling_weight.numel()} entries, "
            f"tokens have dimension {tokens.shape[-1]}."
        )
        raise ContractError(message)


def attention_weights(
    tokens: torch.Tensor, pooling_weight: torch.Tensor
) -> torch.Tensor:
    """Softmax over tokens of the scores `W_s . H_i`, shape (..., N)."""
    _check_pooling_dims(tokens, pooling_weight)
    scores = tokens @ pooling_weight.reshape(-1)
    return torch.softmax(scores, dim=-1)


def attention_pool(tokens: torch.Tensor, pooling_weight: torch.Tensor) -> torch.Tensor:
    """Pool (..., N, d_s) tokens into a (..., d_s) style code."""
    alpha = attention_weights(tokens, pooling_weight)
    return (alpha.unsqueeze(-1) * tokens).sum(dim=-2)


class StyleEncoder(nn.Module):
    def __init__(
        self,
        style_dim: int = 256,
        num_layers: int = 3,
        heads: int = 4,
        ffn_dim: int = 1024,
        dropout: float = 0.0,
    ) -> None:
        super().__init__()
        self.style_dim = style_dim
        self.frame_embedding = nn.Linear(EXPRESSION_DIM, style_dim)
        self.positional = PositionalEncoding(style_dim)
        self.encoder = transformer_encoder(
            style_dim, heads, ffn_dim, num_layers, dropout
        )
        self.pooling = nn.Linear(style_dim, 1, bias=False)

    def encode_tokens(self, motion: torch.Tensor) -> torch.Tensor:
        """Map (B, N, 64) motion to (B, N, d_s) style tokens."""
        if motion.ndim != 3 or motion.shape[-1] != EXPRESSION_DIM:  # noqa: PLR2004
            message = f"Expected motion of shape (B, N, 64), got {tuple(motion.shape)}."
            raise ContractError(message)
        if motion.shape[1] < 1:
            raise ContractError("Style reference must contain at least one frame.")
        tokens = self.positional(self.frame_embedding(motion))
        return self.encoder(tokens)

    def forward(self, motion: torch.Tensor) -> torch.Tensor:
        return attention_pool(self.encode_tokens(motion), self.pooling.weight)


def _as_batch(motion: MotionSequence, like: nn.Module) -> torch.Tensor:
    if not isinstance(motion, MotionSequence):
        message = f"Expected a MotionSequence, got {type(motion).__name__}."
        raise ContractError(message)
    reference = next(like.parameters())
    return torch.from_numpy(motion.frames.copy()).to(reference)[None]


@torch.no_grad()
def encode_tokens(motion: MotionSequence, encoder: StyleEncoder) -> np.ndarray:
    """Per-frame style tokens of one clip, shape (N, d_s)."""
    tokens = encoder.encode_tokens(_as_batch(motion, encoder))
    return tokens[0].cpu().numpy()


@torch.no_grad()
def extract_style(motion: MotionSequence, encoder: StyleEncoder) -> StyleCode:
    code = encoder(_as_batch(motion, encoder))
    return StyleCode(code[0].cpu().numpy())
