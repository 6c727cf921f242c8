"""Style-controllable dynamic decoder.

Style tokens (the style code repeated 2w+1 times plus positional encodings) query the
articulation features of one phoneme window. Each decoder block runs self-attention,
cross-attention and a style-aware adaptive feed-forward layer whose weights are a
convex blend of K kernels:

    pi = softmax(A s)
    W(s) = sum_k pi_k W_k,   b(s) = sum_k pi_k b_k
    y = g(W(s) x + b(s))

The middle output token is read out into one coefficient group. Two instances, one
per face half, produce the 13 lower and 51 upper coefficients of a frame.
"""

import logging
import math

import torch
import torch.nn.functional as F  # noqa: N812
from torch import nn

from stylemotion.core import FaceSplit, window_indices
from stylemotion.errors import ContractError
from stylemotion.layers import sinusoidal_encoding

logger = logging.getLogger("stylemotion")

# Ablation axis for the number of parallel kernels; 8 is the default.
SUPPORTED_NUM_KERNELS = (1, 4, 8, 16)


class KernelAttention(nn.Module):
    """One affine map from the style code to K scores, followed by softmax."""

    def __init__(self, style_dim: int, num_kernels: int) -> None:
        super().__init__()
        self.proj = nn.Linear(style_dim, num_kernels)

    def scores(self, style: torch.Tensor) -> torch.Tensor:
        if style.shape[-1] != self.proj.in_features:
            message = (
                f"Style code has dimension {style.shape[-1]}, kernel attention "
                f"expects {self.proj.in_features}."
            )
            raise ContractError(message)
        return self.proj(style)

    def forward(self, style: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.scores(style), dim=-1)


class KernelBank(nn.Module):
    def __init__(self, in_features: int, out_features: int, num_kernels: int) -> None:
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.num_kernels = num_kernels
        self.weight = nn.Parameter(torch.empty(num_kernels, out_features, in_features))
        self.bias = nn.Parameter(torch.empty(num_kernels, out_features))
        self.reset_parameters()

    def reset_parameters(self) -> None:
        bound = 1 / math.sqrt(self.in_features)
        for k in range(self.num_kernels):
            nn.init.kaiming_uniform_(self.weight[k], a=math.sqrt(5))
        nn.init.uniform_(self.bias, -bound, bound)

    def blend(self, pi: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Aggregate the kernels with (B, K) weights into (B, out, in) and (B, out)."""
        if pi.shape[-1] != self.num_kernels:
            message = f"Got {pi.shape[-1]} weights for {self.num_kernels} kernels."
            raise ContractError(message)
        weight = torch.einsum("bk,koi->boi", pi, self.weight)
        bias = pi @ self.bias
        return weight, bias


def kernel_attention(style: torch.Tensor, attention: KernelAttention) -> torch.Tensor:
    return attention(style)


def dynamic_ffn(
    x: torch.Tensor,
    style: torch.Tensor,
    bank: KernelBank,
    attention: KernelAttention,
    activation: nn.Module | None = None,
) -> torch.Tensor:
    """Apply the style-blended kernel to `x`.

    Kernels are blended first and applied once, so the activation sees a single
    affine response rather than an average of K activated outputs.

    Args:
        x: Inputs of shape (B, ..., in_features), or (in_features,) with a single
            (d_s,) style code.
        style: Style codes of shape (B, d_s).
        bank: The K parallel weight and bias sets.
        attention: Scores the kernels from the style code.
        activation: Nonlinearity g; identity if None.

    Returns:
        Outputs of shape (B, ..., out_features).
    """
    if style.ndim == 1:
        return dynamic_ffn(x[None], style[None], bank, attention, activation)[0]
    if x.shape[-1] != bank.in_features:
        message = f"Input has {x.shape[-1]} features, expected {bank.in_features}."
        raise ContractError(message)
    if x.shape[0] != style.shape[0]:
        message = f"Batch mismatch: {x.shape[0]} inputs, {style.shape[0]} style codes."
        raise ContractError(message)
    weight, bias = bank.blend(attention(style))
    y = torch.einsum("b...i,boi->b...o", x, weight)
    y = y + bias.reshape(bias.shape[0], *([1] * (x.ndim - 2)), bias.shape[-1])
    return activation(y) if activation is not None else y


class DynamicLinear(nn.Module):
    def __init__(
        self, in_features: int, out_features: int, style_dim: int, num_kernels: int
    ) -> None:
        super().__init__()
        self.bank = KernelBank(in_features, out_features, num_kernels)
        self.attention = KernelAttention(style_dim, num_kernels)

    def forward(self, x: torch.Tensor, style: torch.Tensor) -> torch.Tensor:
        return dynamic_ffn(x, style, self.bank, self.attention)


class StaticLinear(nn.Linear):
    """Vanilla linear layer with the adaptive layer's call signature."""

    def forward(
        self, x: torch.Tensor, style: torch.Tensor  # noqa: ARG002
    ) -> torch.Tensor:
        return super().forward(x)


class AdaptiveFeedForward(nn.Module):
    def __init__(
        self,
        dim: int,
        ffn_dim: int,
        style_dim: int,
        num_kernels: int,
        dynamic: bool = True,
    ) -> None:
        super().__init__()
        if dynamic:
            self.linear1: nn.Module = DynamicLinear(
                dim, ffn_dim, style_dim, num_kernels
            )
            self.linear2: nn.Module = DynamicLinear(
                ffn_dim, dim, style_dim, num_kernels
            )
        else:
            self.linear1 = StaticLinear(dim, ffn_dim)
            self.linear2 = StaticLinear(ffn_dim, dim)

    def forward(self, x: torch.Tensor, style: torch.Tensor) -> torch.Tensor:
        return self.linear2(F.relu(self.linear1(x, style)), style)


def make_style_tokens(
    style: torch.Tensor, half_width: int, encoding: torch.Tensor | None = None
) -> torch.Tensor:
    """Repeat the style code 2w+1 times and add positional encodings.

    Args:
        style: Style codes of shape (B, d_s) or (d_s,).
        half_width: Window half-width w.
        encoding: (2w+1, d_s) table; sinusoidal if None.

    Returns:
        Tokens of shape (B, 2w+1, d_s), or (2w+1, d_s) for a single code.
    """
    if half_width < 0:
        message = f"Half-width must be non-negative, got {half_width}."
        raise ContractError(message)
    length = 2 * half_width + 1
    if encoding is None:
        encoding = sinusoidal_encoding(length, style.shape[-1], dtype=style.dtype)
    return style.unsqueeze(-2) + encoding.to(style)


class DecoderBlock(nn.Module):
    """Self-attention, cross-attention, adaptive feed-forward; post-norm residuals."""

    def __init__(
        self,
        style_dim: int,
        audio_dim: int,
        heads: int,
        ffn_dim: int,
        num_kernels: int,
        dynamic: bool = True,
        dropout: float = 0.0,
    ) -> None:
        super().__init__()
        self.self_attn = nn.MultiheadAttention(
            style_dim, heads, dropout=dropout, batch_first=True
        )
        self.cross_attn = nn.MultiheadAttention(
            style_dim,
            heads,
            dropout=dropout,
            kdim=audio_dim,
            vdim=audio_dim,
            batch_first=True,
        )
        self.ffn = AdaptiveFeedForward(
            style_dim, ffn_dim, style_dim, num_kernels, dynamic
        )
        self.norm1 = nn.LayerNorm(style_dim)
        self.norm2 = nn.LayerNorm(style_dim)
        self.norm3 = nn.LayerNorm(style_dim)
        self.dropout = nn.Dropout(dropout)

    def forward(
        self, tokens: torch.Tensor, memory: torch.Tensor, style: torch.Tensor
    ) -> torch.Tensor:
        attended = self.self_attn(tokens, tokens, tokens, need_weights=False)[0]
        tokens = self.norm1(tokens + self.dropout(attended))
        attended = self.cross_attn(tokens, memory, memory, need_weights=False)[0]
        tokens = self.norm2(tokens + self.dropout(attended))
        return self.norm3(tokens + self.dropout(self.ffn(tokens, style)))


class StyleDecoder(nn.Module):
    """One decoder instance producing one coefficient group (13 or 51 values)."""

    def __init__(
        self,
        group_size: int,
        style_dim: int = 256,
        audio_dim: int = 256,
        half_width: int = 5,
        num_blocks: int = 3,
        heads: int = 4,
        ffn_dim: int = 1024,
        num_kernels: int = 8,
        dynamic: bool = True,
        dropout: float = 0.0,
    ) -> None:
        super().__init__()
        if num_kernels < 1:
            message = f"Number of kernels must be positive, got {num_kernels}."
            raise ContractError(message)
        if num_kernels not in SUPPORTED_NUM_KERNELS:
            logger.debug("Using %s kernels, off the ablation axis.", num_kernels)
        self.group_size = group_size
        self.half_width = half_width
        self.register_buffer(
            "token_encoding",
            sinusoidal_encoding(2 * half_width + 1, style_dim),
            persistent=False,
        )
        self.blocks = nn.ModuleList(
            DecoderBlock(
                style_dim, audio_dim, heads, ffn_dim, num_kernels, dynamic, dropout
            )
            for _ in range(num_blocks)
        )
        self.readout = nn.Linear(style_dim, group_size)

    def forward(
        self,
        audio: torch.Tensor,
        style: torch.Tensor,
        queries: torch.Tensor | None = None,
    ) -> torch.Tensor:
        """Decode one coefficient group per window.

        Args:
            audio: Articulation features of shape (B, 2w+1, audio_dim).
            style: Style codes of shape (B, d_s).
            queries: Optional (2w+1, d_s) tokens used instead of the style tokens.

        Returns:
            Group coefficients of shape (B, group_size).
        """
        window = 2 * self.half_width + 1
        if audio.ndim != 3 or audio.shape[1] != window:  # noqa: PLR2004
            message = (
                f"Expected audio features with {window} rows, "
                f"got shape {tuple(audio.shape)}."
            )
            raise ContractError(message)
        if queries is None:
            tokens = make_style_tokens(style, self.half_width, self.token_encoding)
        else:
            tokens = queries.to(audio).expand(audio.shape[0], -1, -1)
        for block in self.blocks:
            tokens = block(tokens, audio, style)
        return self.readout(tokens[:, self.half_width])


def decode_group(
    audio: torch.Tensor, style: torch.Tensor, decoder: StyleDecoder
) -> torch.Tensor:
    return decoder(audio, style)


def merge_groups(
    lower: torch.Tensor, upper: torch.Tensor, split: FaceSplit
) -> torch.Tensor:
    """Tensor counterpart of `core.merge_expression` over the last axis."""
    inverse = torch.as_tensor(split.inverse_order, device=lower.device)
    return torch.cat([lower, upper], dim=-1)[..., inverse]


def decode_frame(
    audio: torch.Tensor,
    style: torch.Tensor,
    lower_decoder: StyleDecoder,
    upper_decoder: StyleDecoder,
    split: FaceSplit,
    queries: torch.Tensor | None = None,
) -> torch.Tensor:
    """Decode (B, 2w+1, audio_dim) windows into (B, 64) expression frames."""
    lower = lower_decoder(audio, style, queries)
    upper = upper_decoder(audio, style, queries)
    return merge_groups(lower, upper, split)


def decode_sequence(
    phonemes: torch.Tensor,
    style: torch.Tensor,
    audio_encoder: nn.Module,
    lower_decoder: StyleDecoder,
    upper_decoder: StyleDecoder,
    split: FaceSplit,
    queries: torch.Tensor | None = None,
) -> torch.Tensor:
    """Decode (B, L) phoneme labels into (B, L, 64) motion, one window per frame."""
    if phonemes.ndim != 2 or phonemes.shape[1] < 1:  # noqa: PLR2004
        message = f"Expected phonemes of shape (B, L), got {tuple(phonemes.shape)}."
        raise ContractError(message)
    batch, length = phonemes.shape
    half_width = lower_decoder.half_width
    indices = torch.as_tensor(
        window_indices(length, half_width), device=phonemes.device
    )
    windows = phonemes[:, indices]
    features = audio_encoder(windows).reshape(batch * length, 2 * half_width + 1, -1)
    styles = style.repeat_interleave(length, dim=0)
    frames = decode_frame(
        features, styles, lower_decoder, upper_decoder, split, queries
    )
    return frames.reshape(batch, length, -1)
