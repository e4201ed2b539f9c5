"""Tests for the convolution and entity position-aware attention."""

import math

import pytest
import torch

from kare.errors import ShapeError
from kare.pa_encoder import (
    AttentionParams,
    AttentionTrace,
    FilterBank,
    aggregate_vector,
    conv_encode,
    format_trace,
    position_attention,
    vanilla_attention,
)


def _ones_bank() -> FilterBank:
    bank = FilterBank(input_width=1, windows=(3,), filters=1)
    with torch.no_grad():
        bank.convs[0].weight.fill_(1.0)
        bank.convs[0].bias.zero_()
    return bank


def _unit_attention(position_dim=None) -> AttentionParams:
    params = AttentionParams(hidden_dim=1, attn_dim=1, position_dim=position_dim)
    with torch.no_grad():
        for p in params.parameters():
            p.fill_(1.0)
    return params


class TestConvEncode:
    def test_ones_filter_hand_case(self):
        x = torch.tensor([[1.0], [2.0], [3.0]], dtype=torch.float64)
        h = conv_encode(x, _ones_bank())
        expected = torch.tensor([[math.tanh(3)], [math.tanh(6)], [math.tanh(5)]])
        assert torch.allclose(h, expected.double())

    def test_keeps_length_for_every_window(self):
        bank = FilterBank(input_width=4, windows=(2, 3, 4), filters=5)
        h = conv_encode(torch.randn(7, 4, dtype=torch.float64), bank)
        assert h.shape == (7, 15)
        assert bank.output_width == 15

    def test_padding_does_not_leak(self):
        torch.manual_seed(0)
        bank = FilterBank(input_width=2, windows=(3,), filters=2)
        x = torch.randn(1, 3, 2, dtype=torch.float64)
        padded = torch.cat([x, torch.randn(1, 2, 2, dtype=torch.float64)], dim=1)
        mask = torch.tensor([[True, True, True, False, False]])
        h = bank(padded, mask)[:, :3]
        assert torch.allclose(h, conv_encode(x[0], bank))

    def test_width_mismatch(self):
        with pytest.raises(ShapeError):
            conv_encode(torch.zeros(3, 2, dtype=torch.float64), _ones_bank())

    def test_bad_window(self):
        with pytest.raises(ShapeError):
            FilterBank(input_width=1, windows=(0,), filters=1)


class TestAggregateVector:
    def test_masked_mean(self):
        h = torch.tensor([[[1.0], [3.0], [100.0]]], dtype=torch.float64)
        mask = torch.tensor([[True, True, False]])
        assert aggregate_vector(h, mask).item() == pytest.approx(2.0)

    def test_empty(self):
        with pytest.raises(ShapeError):
            aggregate_vector(torch.zeros(0, 3, dtype=torch.float64))


class TestAttention:
    def test_vanilla_hand_case(self):
        h = torch.tensor([[0.0], [1.0]], dtype=torch.float64)
        q = aggregate_vector(h)
        trace, R = vanilla_attention(h, q, _unit_attention(), tokens=["a", "b"])
        u0, u1 = math.tanh(0.5), math.tanh(1.5)
        a0 = math.exp(u0) / (math.exp(u0) + math.exp(u1))
        assert trace.alphas == pytest.approx([a0, 1 - a0], abs=1e-6)
        assert R.item() == pytest.approx(1 - a0, abs=1e-6)
        assert trace.tokens == ["a", "b"]

    def test_scores_hand_case(self):
        h = torch.tensor([[[0.0], [1.0]]], dtype=torch.float64)
        q = torch.tensor([[0.5]], dtype=torch.float64)
        mask = torch.ones(1, 2, dtype=torch.bool)
        u = _unit_attention().scores(h, q, None, None, mask)
        assert u[0].tolist() == pytest.approx([0.46212, 0.90515], abs=1e-5)

    def test_zero_position_weights_match_vanilla(self):
        torch.manual_seed(1)
        params = AttentionParams(hidden_dim=3, attn_dim=4, position_dim=2)
        with torch.no_grad():
            params.W_c.weight.zero_()
            params.W_d.weight.zero_()
        h = torch.randn(5, 3, dtype=torch.float64)
        pc = torch.randn(5, 2, dtype=torch.float64)
        pd = torch.randn(5, 2, dtype=torch.float64)
        q = aggregate_vector(h)
        aware, R1 = position_attention(h, q, pc, pd, params)
        plain, R2 = vanilla_attention(h, q, params)
        assert aware.alphas == pytest.approx(plain.alphas)
        assert torch.allclose(R1, R2)

    def test_weights_sum_to_one_and_ignore_padding(self):
        torch.manual_seed(2)
        params = AttentionParams(hidden_dim=3, attn_dim=4)
        h = torch.randn(2, 4, 3, dtype=torch.float64)
        mask = torch.tensor([[True, True, True, True], [True, True, False, False]])
        alpha, _ = params(h, aggregate_vector(h, mask), None, None, mask)
        assert torch.allclose(alpha.sum(dim=-1), torch.ones(2, dtype=torch.float64))
        assert alpha[1, 2:].abs().sum() == 0

    def test_random_forwards_form_convex_combinations(self):
        gen = torch.Generator().manual_seed(3)
        for trial in range(1000):
            n, d_h, d_a, d_p = (
                int(v) for v in torch.randint(1, 7, (4,), generator=gen)
            )
            torch.manual_seed(trial)
            params = AttentionParams(hidden_dim=d_h, attn_dim=d_a, position_dim=d_p)
            h = torch.randn(n, d_h, generator=gen, dtype=torch.float64)
            pc = torch.randn(n, d_p, generator=gen, dtype=torch.float64)
            pd = torch.randn(n, d_p, generator=gen, dtype=torch.float64)
            trace, R = position_attention(h, aggregate_vector(h), pc, pd, params)
            alpha = torch.tensor(trace.alphas, dtype=torch.float64)
            assert alpha.sum().item() == pytest.approx(1.0, abs=1e-12)
            assert bool((alpha >= 0).all())
            assert torch.allclose(R, alpha @ h)
            assert bool((R >= h.min(dim=0).values - 1e-12).all())
            assert bool((R <= h.max(dim=0).values + 1e-12).all())

    def test_position_attention_needs_position_weights(self):
        h = torch.zeros(2, 1, dtype=torch.float64)
        pc = torch.zeros(2, 1, dtype=torch.float64)
        with pytest.raises(ShapeError):
            position_attention(h, aggregate_vector(h), pc, pc, _unit_attention())

    def test_misaligned_positions(self):
        params = _unit_attention(position_dim=1)
        h = torch.zeros(3, 1, dtype=torch.float64)
        pc = torch.zeros(2, 1, dtype=torch.float64)
        with pytest.raises(ShapeError):
            position_attention(h, aggregate_vector(h), pc, pc, params)


class TestFormatTrace:
    def test_peak_gets_full_bar(self):
        text = format_trace(AttentionTrace([0.25, 0.75], ["a", "b"]), width=4)
        assert text == "a[0.250]█ b[0.750]████"

    def test_to_dict(self):
        row = AttentionTrace([1.0], ["x"], predicted="Reason", gold="Effect").to_dict()
        assert row == {
            "tokens": ["x"],
            "alphas": [1.0],
            "predicted": "Reason",
            "gold": "Effect",
        }
