"""Test kernel attention, the adaptive feed-forward layer and the decoders."""

import math

import numpy as np
import pytest
import torch
from torch import nn

from stylemotion.audio_encoder import AudioEncoder
from stylemotion.core import FaceSplit
from stylemotion.dynamic_decoder import (
    AdaptiveFeedForward,
    KernelAttention,
    KernelBank,
    StyleDecoder,
    decode_frame,
    decode_group,
    decode_sequence,
    dynamic_ffn,
    kernel_attention,
    make_style_tokens,
)
from stylemotion.errors import ContractError
from stylemotion.layers import sinusoidal_encoding


def _decoder(group_size, seed=0, **kwargs):
    torch.manual_seed(seed)
    options = {
        "style_dim": 8,
        "audio_dim": 8,
        "half_width": 1,
        "num_blocks": 1,
        "heads": 2,
        "ffn_dim": 16,
        "num_kernels": 2,
    }
    options.update(kwargs)
    return StyleDecoder(group_size, **options).double().eval()


@pytest.fixture
def parts():
    torch.manual_seed(0)
    audio = AudioEncoder(vocab_size=6, feature_dim=8, num_layers=1, heads=2, ffn_dim=16)
    return audio.double().eval(), _decoder(13, seed=1), _decoder(51, seed=2)


def test_zero_map_gives_uniform_weights():
    attention = KernelAttention(4, 8)
    nn.init.zeros_(attention.proj.weight)
    nn.init.zeros_(attention.proj.bias)
    pi = kernel_attention(torch.randn(3, 4), attention)
    assert torch.allclose(pi, torch.full((3, 8), 1 / 8))


def test_single_kernel_weight_is_one():
    pi = kernel_attention(torch.randn(5, 4), KernelAttention(4, 1))
    assert torch.equal(pi, torch.ones(5, 1))


def test_hand_computed_kernel_weights():
    """Scores (0, ln 3) give weights (0.25, 0.75)."""
    attention = KernelAttention(1, 2).double()
    with torch.no_grad():
        attention.proj.weight.zero_()
        attention.proj.bias.copy_(torch.tensor([0.0, math.log(3)]))
    pi = kernel_attention(torch.zeros(1, 1, dtype=torch.float64), attention)
    assert pi[0].tolist() == pytest.approx([0.25, 0.75], abs=1e-12)


def test_kernel_weights_on_simplex():
    """1000 random style codes give weights on the simplex."""
    torch.manual_seed(0)
    attention = KernelAttention(16, 8).double()
    styles = torch.randn(1000, 16, dtype=torch.float64) * 10
    pi = kernel_attention(styles, attention)
    assert (pi >= 0).all()
    assert (pi.sum(dim=-1) - 1).abs().max() <= 1e-6


def _set_bank(bank, weights, biases):
    with torch.no_grad():
        bank.weight.copy_(torch.tensor(weights, dtype=bank.weight.dtype))
        bank.bias.copy_(torch.tensor(biases, dtype=bank.bias.dtype))


def test_hand_blended_kernels():
    """Kernels (2, 0) and (4, 1) blended half and half map 1 to 3.5."""
    bank = KernelBank(1, 1, 2).double()
    _set_bank(bank, [[[2.0]], [[4.0]]], [[0.0], [1.0]])
    attention = KernelAttention(1, 2).double()
    nn.init.zeros_(attention.proj.weight)
    nn.init.zeros_(attention.proj.bias)
    y = dynamic_ffn(
        torch.ones(1, 1, dtype=torch.float64),
        torch.zeros(1, 1, dtype=torch.float64),
        bank,
        attention,
    )
    assert y.item() == pytest.approx(3.5, abs=1e-12)


def test_one_hot_weights_select_kernel():
    """Extreme scores reduce the blend to one kernel."""
    torch.manual_seed(0)
    bank = KernelBank(3, 4, 2).double()
    attention = KernelAttention(1, 2).double()
    with torch.no_grad():
        attention.proj.weight.zero_()
        attention.proj.bias.copy_(torch.tensor([0.0, 1000.0]))
    x = torch.randn(2, 3, dtype=torch.float64)
    style = torch.zeros(2, 1, dtype=torch.float64)
    y = dynamic_ffn(x, style, bank, attention, nn.ReLU())
    expected = torch.relu(x @ bank.weight[1].T + bank.bias[1])
    assert torch.allclose(y, expected, atol=1e-12)


def test_identical_kernels_ignore_style():
    torch.manual_seed(0)
    bank = KernelBank(3, 4, 4).double()
    with torch.no_grad():
        bank.weight.copy_(bank.weight[:1].clone().expand(4, -1, -1))
        bank.bias.copy_(bank.bias[:1].clone().expand(4, -1))
    attention = KernelAttention(5, 4).double()
    x = torch.randn(3, dtype=torch.float64)
    first = dynamic_ffn(x, torch.randn(5, dtype=torch.float64), bank, attention)
    second = dynamic_ffn(x, torch.randn(5, dtype=torch.float64), bank, attention)
    assert torch.allclose(first, second, atol=1e-12)


def test_blend_matches_per_kernel_oracle():
    """Blending weights first equals summing the weighted per-kernel affine maps."""
    generator = torch.Generator().manual_seed(0)
    for _ in range(100):
        torch.manual_seed(int(torch.randint(0, 2**31, (1,), generator=generator)))
        k = int(torch.randint(1, 9, (1,), generator=generator))
        bank = KernelBank(6, 5, k).double()
        attention = KernelAttention(4, k).double()
        x = torch.randn(3, 6, dtype=torch.float64)
        style = torch.randn(3, 4, dtype=torch.float64)
        y = dynamic_ffn(x, style, bank, attention, nn.ReLU())

        pi = torch.softmax(attention.proj(style), dim=-1)
        affine = sum(
            pi[:, i : i + 1] * (x @ bank.weight[i].T + bank.bias[i]) for i in range(k)
        )
        oracle = torch.relu(affine)
        scale = oracle.abs().max().clamp(min=1e-12)
        assert ((y - oracle).abs().max() / scale).item() <= 1e-6


def test_dynamic_ffn_dimension_mismatch():
    bank = KernelBank(3, 4, 2)
    attention = KernelAttention(5, 2)
    with pytest.raises(ContractError, match="features"):
        dynamic_ffn(torch.randn(2, 4), torch.randn(2, 5), bank, attention)
    with pytest.raises(ContractError, match="Batch"):
        dynamic_ffn(torch.randn(3, 3), torch.randn(2, 5), bank, attention)
    with pytest.raises(ContractError, match="dimension"):
        dynamic_ffn(torch.randn(2, 3), torch.randn(2, 6), bank, attention)


def test_static_feed_forward_ignores_style():
    torch.manual_seed(0)
    ffn = AdaptiveFeedForward(8, 16, 8, 4, dynamic=False).double()
    x = torch.randn(2, 3, 8, dtype=torch.float64)
    first = ffn(x, torch.randn(2, 8, dtype=torch.float64))
    second = ffn(x, torch.randn(2, 8, dtype=torch.float64))
    assert torch.equal(first, second)


def test_style_tokens_without_encoding_repeat_code():
    style = torch.randn(2, 8)
    tokens = make_style_tokens(style, 2, torch.zeros(5, 8))
    assert tokens.shape == (2, 5, 8)
    assert torch.equal(tokens, style[:, None].expand(-1, 5, -1))


def test_style_tokens_eleven_rows():
    assert make_style_tokens(torch.zeros(256), 5).shape == (11, 256)


def test_style_tokens_rows_differ_for_zero_code():
    tokens = make_style_tokens(torch.zeros(8, dtype=torch.float64), 5)
    for i in range(11):
        for j in range(i + 1, 11):
            assert not torch.equal(tokens[i], tokens[j])


def test_style_tokens_reject_negative_width():
    with pytest.raises(ContractError):
        make_style_tokens(torch.zeros(8), -1)


def test_sinusoidal_table_layout():
    """Sines in even columns, cosines in odd columns."""
    table = sinusoidal_encoding(4, 6, dtype=torch.float64)
    assert table[0].tolist() == [0.0, 1.0, 0.0, 1.0, 0.0, 1.0]
    assert table[1, 0].item() == pytest.approx(math.sin(1.0))
    assert table[1, 1].item() == pytest.approx(math.cos(1.0))


def test_decode_group_size_and_determinism():
    decoder = _decoder(13)
    audio = torch.randn(4, 3, 8, dtype=torch.float64)
    style = torch.randn(4, 8, dtype=torch.float64)
    first = decode_group(audio, style, decoder)
    assert first.shape == (4, 13)
    assert torch.equal(first, decode_group(audio, style, decoder))


def test_decode_group_depends_on_style():
    decoder = _decoder(13)
    audio = torch.randn(1, 3, 8, dtype=torch.float64)
    first = decode_group(audio, torch.randn(1, 8, dtype=torch.float64), decoder)
    second = decode_group(audio, torch.randn(1, 8, dtype=torch.float64), decoder)
    assert (first - second).norm() > 0


def test_decode_group_row_count():
    with pytest.raises(ContractError, match="3 rows"):
        decode_group(torch.randn(1, 5, 8), torch.randn(1, 8), _decoder(13).float())


def test_decode_frame_routes_groups(parts):
    """Lower decoder output lands at the lower indices."""
    _, lower, upper = parts
    rng = np.random.default_rng(0)
    split = FaceSplit(tuple(rng.choice(64, size=13, replace=False).tolist()))
    audio = torch.randn(2, 3, 8, dtype=torch.float64)
    style = torch.randn(2, 8, dtype=torch.float64)
    frame = decode_frame(audio, style, lower, upper, split)
    assert frame.shape == (2, 64)
    assert torch.equal(frame[:, list(split.lower_indices)], lower(audio, style))
    assert torch.equal(frame[:, list(split.upper_indices)], upper(audio, style))


def test_zero_upper_readout_zeroes_upper_face(parts):
    _, lower, upper = parts
    with torch.no_grad():
        upper.readout.weight.zero_()
        upper.readout.bias.zero_()
    split = FaceSplit.default()
    frame = decode_frame(
        torch.randn(3, 3, 8, dtype=torch.float64),
        torch.randn(3, 8, dtype=torch.float64),
        lower,
        upper,
        split,
    )
    assert not frame[:, list(split.upper_indices)].any()


@pytest.mark.parametrize("length", [1, 11, 64, 100])
def test_decode_sequence_length(parts, length):
    audio, lower, upper = parts
    phonemes = torch.randint(0, 6, (2, length))
    style = torch.randn(2, 8, dtype=torch.float64)
    with torch.no_grad():
        split = FaceSplit.default()
        motion = decode_sequence(phonemes, style, audio, lower, upper, split)
    assert motion.shape == (2, length, 64)


def test_decode_sequence_depends_on_style(parts):
    audio, lower, upper = parts
    phonemes = torch.randint(0, 6, (1, 12))
    split = FaceSplit.default()
    with torch.no_grad():
        first = decode_sequence(
            phonemes, torch.randn(1, 8, dtype=torch.float64), audio, lower, upper, split
        )
        second = decode_sequence(
            phonemes, torch.randn(1, 8, dtype=torch.float64), audio, lower, upper, split
        )
    assert (first - second).norm(dim=-1).mean() > 0


def test_frame_depends_only_on_its_window(parts):
    """Changing a label outside frame t's window leaves frame t bit-identical."""
    audio, lower, upper = parts
    phonemes = torch.tensor([[0, 1, 2, 3, 4, 5, 0, 1, 2, 3]])
    changed = phonemes.clone()
    changed[0, 8] = 5
    style = torch.randn(1, 8, dtype=torch.float64)
    split = FaceSplit.default()
    with torch.no_grad():
        first = decode_sequence(phonemes, style, audio, lower, upper, split)
        second = decode_sequence(changed, style, audio, lower, upper, split)
    assert torch.equal(first[0, 4], second[0, 4])
    assert not torch.equal(first[0, 8], second[0, 8])


def test_equal_kernels_with_constant_queries_ignore_style(parts):
    """With constant queries and equal kernels the style has no path to the output."""
    audio, lower, upper = parts
    with torch.no_grad():
        for decoder in (lower, upper):
            for module in decoder.modules():
                if isinstance(module, KernelBank):
                    for tensor in (module.weight, module.bias):
                        tensor.copy_(tensor[:1].clone().expand_as(tensor))
    queries = torch.randn(3, 8, dtype=torch.float64)
    phonemes = torch.randint(0, 6, (1, 10))
    split = FaceSplit.default()
    with torch.no_grad():
        first, second = (
            decode_sequence(phonemes, style, audio, lower, upper, split, queries)
            for style in torch.randn(2, 1, 8, dtype=torch.float64)
        )
    assert torch.allclose(first, second, atol=1e-12)


def test_decoder_gradient_on_kernel_banks(parts, fd_agreement):
    """Autograd matches central differences on every kernel bank entry sampled."""
    audio, lower, upper = parts
    for module in parts:
        module.train()
    phonemes = torch.tensor([[0, 1, 2, 3, 4, 5]])
    style = torch.randn(1, 8, dtype=torch.float64)
    target = torch.randn(1, 6, 64, dtype=torch.float64)
    split = FaceSplit.default()

    def loss():
        pred = decode_sequence(phonemes, style, audio, lower, upper, split)
        return ((pred - target) ** 2).mean()

    banks = [
        p
        for decoder in (lower, upper)
        for module in decoder.modules()
        if isinstance(module, KernelBank)
        for p in (module.weight, module.bias)
    ]
    assert fd_agreement(loss, banks, samples=80, eps=1e-7) >= 0.99
