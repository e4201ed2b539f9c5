"""Tests for kare.context_encoder: layer stacks, the surrogate and external vectors."""

import json
import math

import pytest
import torch

from kare.config import SurrogateConfig
from kare.context_encoder import (
    LayerStack,
    SurrogateEncoder,
    encode_context,
    load_external_context,
    pool_context,
    resolve_layer,
)
from kare.errors import AlignmentError, ContextError

SMALL = SurrogateConfig(layers=2, heads=2, hidden=8, ff=16, max_len=6, dropout=0.0)


def _stack(rows, special, token) -> LayerStack:
    h = torch.tensor(rows, dtype=torch.float64)
    return LayerStack(
        layers=[torch.zeros_like(h), h],
        special_mask=torch.tensor(special),
        token_mask=torch.tensor(token),
    )


def _dot(a, b):
    return sum(x * y for x, y in zip(a, b))


def _affine(weight, bias, v):
    return [_dot(row, v) + c for row, c in zip(weight, bias)]


def _layer_norm(v, weight, bias, eps=1e-5):
    mean = sum(v) / len(v)
    var = sum((x - mean) ** 2 for x in v) / len(v)
    scale = math.sqrt(var + eps)
    return [(x - mean) / scale * g + c for x, g, c in zip(v, weight, bias)]


def _gelu(x):
    return 0.5 * x * (1 + math.erf(x / math.sqrt(2)))


class TestResolveLayer:
    def test_selectors(self):
        assert resolve_layer(12, -1) == 11
        assert resolve_layer(12, 0) == 12
        assert resolve_layer(12, 3) == 3
        assert resolve_layer(2, -1) == 1

    def test_out_of_range(self):
        with pytest.raises(ContextError):
            resolve_layer(2, 3)
        with pytest.raises(ContextError):
            resolve_layer(2, -3)

    def test_embedding_output_is_not_selectable(self):
        with pytest.raises(ContextError):
            resolve_layer(2, -2)
        with pytest.raises(ContextError):
            resolve_layer(1, -1)


class TestPoolContext:
    def test_mean_skips_framing_rows(self):
        stack = _stack(
            [[100.0], [1.0], [3.0], [-100.0]],
            [True, False, False, True],
            [False, True, True, False],
        )
        assert pool_context(stack, layer_select=0).item() == pytest.approx(2.0)

    def test_cls_takes_begin_row(self):
        stack = _stack(
            [[7.0], [1.0], [3.0]],
            [True, False, True],
            [False, True, False],
        )
        assert pool_context(stack, 0, pool="cls").item() == 7.0

    def test_cls_without_begin_token(self):
        stack = _stack([[1.0], [2.0]], [False, False], [True, True])
        with pytest.raises(ContextError):
            pool_context(stack, 0, pool="cls")

    def test_only_special_tokens(self):
        stack = _stack([[1.0], [2.0]], [True, True], [False, False])
        with pytest.raises(ContextError):
            pool_context(stack, 0)

    def test_unknown_pool(self):
        stack = _stack([[1.0]], [False], [True])
        with pytest.raises(ContextError):
            pool_context(stack, 0, pool="max")

    def test_non_token_rows_do_not_matter(self):
        gen = torch.Generator().manual_seed(7)
        for _ in range(200):
            b, t, d = (int(v) for v in torch.randint(1, 6, (3,), generator=gen))
            t += 2
            lengths = torch.randint(1, t - 1, (b,), generator=gen)
            token = torch.zeros(b, t, dtype=torch.bool)
            special = torch.zeros(b, t, dtype=torch.bool)
            for i, n in enumerate(lengths.tolist()):
                special[i, 0] = special[i, n + 1] = True
                token[i, 1 : n + 1] = True
            layers = [torch.randn(b, t, d, generator=gen, dtype=torch.float64)]
            layers.append(torch.randn(b, t, d, generator=gen, dtype=torch.float64))
            noise = torch.randn(b, t, d, generator=gen, dtype=torch.float64) * 50
            perturbed = layers[1] + noise * (~token).unsqueeze(-1)
            before = pool_context(LayerStack(layers, special, token), 0)
            after = pool_context(LayerStack([layers[0], perturbed], special, token), 0)
            assert torch.allclose(before, after, atol=1e-12)
            mean = (layers[1] * token.unsqueeze(-1)).sum(1) / lengths.unsqueeze(-1)
            assert torch.allclose(before, mean)


class TestSurrogateEncoder:
    def test_stack_shapes(self):
        torch.manual_seed(0)
        encoder = SurrogateEncoder(vocab_size=10, cfg=SMALL)
        stack = encode_context([1, 2, 3], encoder)
        assert stack.num_layers == 2
        assert len(stack.layers) == 3
        assert all(h.shape == (5, 8) for h in stack.layers)
        assert stack.special_mask.tolist() == [True, False, False, False, True]
        assert stack.token_mask.tolist() == [False, True, True, True, False]

    def test_batch_matches_single(self):
        torch.manual_seed(0)
        encoder = SurrogateEncoder(vocab_size=10, cfg=SMALL).eval()
        batch = encoder([[1, 2, 3], [4]])
        single = encode_context([4], encoder)
        pooled = pool_context(batch, -1)
        assert torch.allclose(pooled[1], pool_context(single, -1))

    def test_truncates_long_input(self, caplog):
        torch.manual_seed(0)
        encoder = SurrogateEncoder(vocab_size=10, cfg=SMALL)
        stack = encode_context(list(range(9)), encoder)
        assert stack.layers[-1].shape[0] == SMALL.max_len + 2
        assert "truncated" in caplog.text

    def test_single_layer_matches_manual_forward(self):
        cfg = SurrogateConfig(layers=1, heads=1, hidden=2, ff=3, max_len=4)
        torch.manual_seed(5)
        encoder = SurrogateEncoder(vocab_size=3, cfg=cfg).eval()
        with torch.no_grad():
            for p in encoder.parameters():
                p.copy_(torch.randn_like(p))
        stack = encode_context([1], encoder)

        def w(module):
            return module.weight.tolist(), module.bias.tolist()

        ids = [encoder.begin_id, 1, encoder.end_id]
        tok = encoder.tokens.weight.tolist()
        pos = encoder.positions.weight.tolist()
        x = [
            _layer_norm([a + b for a, b in zip(tok[i], pos[t])], *w(encoder.norm))
            for t, i in enumerate(ids)
        ]
        layer = encoder.layers[0]
        q = [_affine(*w(layer.attention.query), r) for r in x]
        k = [_affine(*w(layer.attention.key), r) for r in x]
        v = [_affine(*w(layer.attention.value), r) for r in x]
        z = []
        for s in range(3):
            scores = [_dot(q[s], k[t]) / math.sqrt(2) for t in range(3)]
            top = max(scores)
            e = [math.exp(u - top) for u in scores]
            a = [ei / sum(e) for ei in e]
            ctx = [sum(a[t] * v[t][j] for t in range(3)) for j in range(2)]
            o = _affine(*w(layer.attention.out), ctx)
            y = _layer_norm([xi + oi for xi, oi in zip(x[s], o)], *w(layer.norm1))
            hidden = [_gelu(u) for u in _affine(*w(layer.ff_in), y)]
            f = _affine(*w(layer.ff_out), hidden)
            z.append(_layer_norm([yi + fi for yi, fi in zip(y, f)], *w(layer.norm2)))

        expected_embed = torch.tensor(x, dtype=torch.float64)
        expected_top = torch.tensor(z, dtype=torch.float64)
        assert torch.allclose(stack.layers[0], expected_embed, atol=1e-10)
        assert torch.allclose(stack.layers[1], expected_top, atol=1e-10)
        assert torch.allclose(pool_context(stack, 0), expected_top[1], atol=1e-10)

    def test_selected_layer_changes_pooled_vector(self):
        torch.manual_seed(0)
        encoder = SurrogateEncoder(vocab_size=10, cfg=SMALL).eval()
        stack = encode_context([1, 2, 3], encoder)
        second_last = pool_context(stack, -1)
        top = pool_context(stack, 0)
        assert torch.equal(second_last, pool_context(stack, 1))
        assert torch.equal(top, pool_context(stack, 2))
        assert not torch.allclose(second_last, top)


class TestExternalContext:
    def _write(self, path, rows):
        path.write_text("\n".join(json.dumps(r) for r in rows) + "\n", encoding="utf-8")
        return path

    def test_load_and_stack(self, tmp_path):
        p = self._write(
            tmp_path / "ctx.jsonl",
            [{"id": "a", "tokens": ["x", "y"], "vectors": [[1, 2], [3, 4]]}],
        )
        ctx = load_external_context(p, expected_dim=2)
        assert ctx.dim == 2
        assert "a" in ctx
        stack = ctx.stack("a", expected_n=2)
        assert stack.num_layers == 2
        assert pool_context(stack).tolist() == [2.0, 3.0]

    def test_token_count_mismatch(self, tmp_path):
        p = self._write(
            tmp_path / "ctx.jsonl",
            [{"id": "a", "tokens": ["x", "y"], "vectors": [[1, 2]]}],
        )
        with pytest.raises(AlignmentError):
            load_external_context(p)

    def test_width_mismatch(self, tmp_path):
        p = self._write(
            tmp_path / "ctx.jsonl",
            [{"id": "a", "tokens": ["x"], "vectors": [[1, 2, 3]]}],
        )
        with pytest.raises(AlignmentError):
            load_external_context(p, expected_dim=2)

    def test_masked_length_must_match(self, tmp_path):
        p = self._write(
            tmp_path / "ctx.jsonl",
            [{"id": "a", "tokens": ["x"], "vectors": [[1.0]]}],
        )
        ctx = load_external_context(p)
        with pytest.raises(AlignmentError):
            ctx.vectors("a", expected_n=3)
        with pytest.raises(ContextError):
            ctx.vectors("missing")

    def test_malformed_row(self, tmp_path):
        p = tmp_path / "ctx.jsonl"
        p.write_text('{"id": "a"}\n', encoding="utf-8")
        with pytest.raises(ContextError, match="line 1"):
            load_external_context(p)
