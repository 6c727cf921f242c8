"""Building blocks shared by the encoders and the decoder."""

import math

import torch
from torch import nn


def sinusoidal_encoding(
    length: int, dim: int, dtype: torch.dtype = torch.float32
) -> torch.Tensor:
    """Fixed sine/cosine positional table of shape (length, dim).

    Even columns hold sines, odd columns cosines, with wavelengths growing
    geometrically from 2*pi to 10000*2*pi.
    """
    position = torch.arange(length, dtype=torch.float64)[:, None]
    freq = torch.exp(
        torch.arange(0, dim, 2, dtype=torch.float64) * (-math.log(10000.0) / dim)
    )
    table = torch.zeros(length, dim, dtype=torch.float64)
    table[:, 0::2] = torch.sin(position * freq)
    table[:, 1::2] = torch.cos(position * freq)[:, : dim // 2]
    return table.to(dtype)


class PositionalEncoding(nn.Module):
    """Adds the sinusoidal table to a batch-first token sequence."""

    def __init__(self, dim: int, max_length: int = 512) -> None:
        super().__init__()
        self.dim = dim
        self.register_buffer(
            "table", sinusoidal_encoding(max_length, dim), persistent=False
        )

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        length = tokens.shape[-2]
        if length > self.table.shape[0]:
            # Long style clips: grow the table instead of failing.
            table = sinusoidal_encoding(length, self.dim, dtype=tokens.dtype)
            return tokens + table.to(tokens.device)
        return tokens + self.table[:length].to(tokens.dtype)


def transformer_encoder(
    dim: int, heads: int, ffn_dim: int, num_layers: int, dropout: float = 0.0
) -> nn.TransformerEncoder:
    layer = nn.TransformerEncoderLayer(
        d_model=dim,
        nhead=heads,
        dim_feedforward=ffn_dim,
        dropout=dropout,
        batch_first=True,
    )
    return nn.TransformerEncoder(layer, num_layers, enable_nested_tensor=False)
