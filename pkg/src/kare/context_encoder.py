"""Contextual tweet representation from a pluggable provider.

Two providers produce a :class:`LayerStack` of per-token hidden states:

- ``surrogate``: a small trainable transformer encoder (learned token and absolute
  position embeddings, multi-head self-attention, residual + layer norm, GELU
  feed-forward), run over the masked word tokens framed by begin/end tokens;
- ``external``: per-token vectors computed elsewhere (e.g. a pre-trained encoder
  with first-subword pooling) and stored as JSON-lines, one object per example id.

:func:`pool_context` zeroes the framing tokens and averages the selected layer over
the real tokens. The default layer is the second from the top.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from kare.config import SurrogateConfig
from kare.errors import AlignmentError, ContextError

logger = logging.getLogger(__name__)

__all__ = [
    "ExternalContext",
    "LayerStack",
    "SurrogateConfig",
    "SurrogateEncoder",
    "encode_context",
    "load_external_context",
    "pool_context",
    "resolve_layer",
]


@dataclass
class LayerStack:
    """Hidden states per layer.

    ``layers[0]`` is the embedding output and ``layers[k]`` the output of layer k,
    so ``len(layers) == L + 1``. Tensors are ``(T, h_b)`` for one example or
    ``(B, T, h_b)`` for a batch. ``special_mask`` marks the begin/end framing
    tokens, ``token_mask`` the real word tokens (not framing, not padding).
    """

    layers: List[torch.Tensor]
    special_mask: torch.Tensor
    token_mask: torch.Tensor

    @property
    def num_layers(self) -> int:
        return len(self.layers) - 1

    @property
    def hidden(self) -> int:
        return int(self.layers[-1].shape[-1])


def resolve_layer(num_layers: int, select: int) -> int:
    """Map a layer selector to an index into ``LayerStack.layers``.

    ``select >= 1`` names that layer; ``select <= 0`` counts down from the top
    (``0`` is layer L, ``-1`` is layer L-1). The result lies in ``1..L``; the
    embedding output at index 0 is never pooled.
    """
    index = select if select >= 1 else num_layers + select
    if not 1 <= index <= num_layers:
        raise ContextError(f"layer {select} out of range for {num_layers} layer(s)")
    return index


class SelfAttention(nn.Module):
    def __init__(self, hidden: int, heads: int, dropout: float = 0.0) -> None:
        super().__init__()
        if hidden % heads:
            raise ContextError(f"hidden {hidden} not divisible by {heads} heads")
        self.heads = heads
        self.head_dim = hidden // heads
        self.query = nn.Linear(hidden, hidden, dtype=torch.float64)
        self.key = nn.Linear(hidden, hidden, dtype=torch.float64)
        self.value = nn.Linear(hidden, hidden, dtype=torch.float64)
        self.out = nn.Linear(hidden, hidden, dtype=torch.float64)
        self.dropout = nn.Dropout(dropout)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        b, t, _ = x.shape
        return x.view(b, t, self.heads, self.head_dim).transpose(1, 2)

    def forward(self, x: torch.Tensor, pad_mask: torch.Tensor) -> torch.Tensor:
        b, t, h = x.shape
        q = self._split(self.query(x))
        k = self._split(self.key(x))
        v = self._split(self.value(x))
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        scores = scores.masked_fill(~pad_mask[:, None, None, :], float("-inf"))
        weights = self.dropout(torch.softmax(scores, dim=-1))
        ctx = (weights @ v).transpose(1, 2).reshape(b, t, h)
        return self.out(ctx)


class EncoderLayer(nn.Module):
    def __init__(self, cfg: SurrogateConfig) -> None:
        super().__init__()
        self.attention = SelfAttention(cfg.hidden, cfg.heads, cfg.dropout)
        self.norm1 = nn.LayerNorm(cfg.hidden, dtype=torch.float64)
        self.ff_in = nn.Linear(cfg.hidden, cfg.ff, dtype=torch.float64)
        self.ff_out = nn.Linear(cfg.ff, cfg.hidden, dtype=torch.float64)
        self.norm2 = nn.LayerNorm(cfg.hidden, dtype=torch.float64)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, x: torch.Tensor, pad_mask: torch.Tensor) -> torch.Tensor:
        x = self.norm1(x + self.dropout(self.attention(x, pad_mask)))
        return self.norm2(x + self.dropout(self.ff_out(F.gelu(self.ff_in(x)))))


class SurrogateEncoder(nn.Module):
    """Trainable transformer encoder over word-level token ids.

    Ids ``0..vocab_size-1`` are word tokens; the three ids after them are the begin,
    end and padding tokens.
    """

    def __init__(self, vocab_size: int, cfg: SurrogateConfig) -> None:
        super().__init__()
        self.cfg = cfg
        self.vocab_size = vocab_size
        self.begin_id = vocab_size
        self.end_id = vocab_size + 1
        self.pad_id = vocab_size + 2
        self.tokens = nn.Embedding(vocab_size + 3, cfg.hidden, dtype=torch.float64)
        self.positions = nn.Embedding(cfg.max_len + 2, cfg.hidden, dtype=torch.float64)
        self.norm = nn.LayerNorm(cfg.hidden, dtype=torch.float64)
        self.layers = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.layers))
        self.dropout = nn.Dropout(cfg.dropout)
        for module in self.modules():
            if isinstance(module, nn.Linear):
                nn.init.xavier_uniform_(module.weight)
                nn.init.zeros_(module.bias)
            elif isinstance(module, nn.Embedding):
                nn.init.normal_(module.weight, std=0.02)

    def frame(
        self, ids: Sequence[Sequence[int]]
    ) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Add begin/end tokens and pad; returns (ids, special_mask, token_mask)."""
        max_len = self.cfg.max_len
        rows: List[List[int]] = []
        for seq in ids:
            seq = list(seq)
            if len(seq) > max_len:
                logger.warning(
                    f"context input of {len(seq)} tokens truncated to {max_len}"
                )
                seq = seq[:max_len]
            rows.append([self.begin_id, *seq, self.end_id])
        width = max(len(r) for r in rows)
        batch = torch.full((len(rows), width), self.pad_id, dtype=torch.long)
        special = torch.zeros((len(rows), width), dtype=torch.bool)
        token = torch.zeros((len(rows), width), dtype=torch.bool)
        for i, r in enumerate(rows):
            batch[i, : len(r)] = torch.as_tensor(r)
            special[i, 0] = True
            special[i, len(r) - 1] = True
            token[i, 1 : len(r) - 1] = True
        return batch, special, token

    def forward(self, ids: Sequence[Sequence[int]]) -> LayerStack:
        framed, special, token = self.frame(ids)
        pad_mask = special | token
        steps = torch.arange(framed.shape[1]).unsqueeze(0)
        x = self.dropout(self.norm(self.tokens(framed) + self.positions(steps)))
        outputs = [x]
        for layer in self.layers:
            x = layer(x, pad_mask)
            outputs.append(x)
        return LayerStack(layers=outputs, special_mask=special, token_mask=token)


def encode_context(token_ids: Sequence[int], encoder: SurrogateEncoder) -> LayerStack:
    """Run the surrogate over one example; every layer is ``(n + 2) × h_b``."""
    stack = encoder([token_ids])
    return LayerStack(
        layers=[h[0] for h in stack.layers],
        special_mask=stack.special_mask[0],
        token_mask=stack.token_mask[0],
    )


def pool_context(
    stack: LayerStack, layer_select: int = -1, pool: str = "mean"
) -> torch.Tensor:
    """Tweet vector B from one layer of ``stack``.

    ``mean`` zeroes the framing rows and averages over the real tokens only (the
    denominator is the real-token count); ``cls`` takes the begin-token row.
    """
    h = stack.layers[resolve_layer(stack.num_layers, layer_select)]
    single = h.dim() == 2
    if single:
        h = h.unsqueeze(0)
    special = stack.special_mask.view(h.shape[:2])
    token = stack.token_mask.view(h.shape[:2])
    if pool == "cls":
        if not bool(special[:, 0].all()):
            raise ContextError("cls pooling needs a begin token (surrogate provider)")
        out = h[:, 0]
    elif pool == "mean":
        count = token.sum(dim=1, keepdim=True)
        if bool((count == 0).any()):
            raise ContextError("no real tokens to pool: every position is special")
        zeroed = h.masked_fill(~token.unsqueeze(-1), 0.0)
        out = zeroed.sum(dim=1) / count.to(h.dtype)
    else:
        raise ContextError(f"unknown pooling {pool!r}")
    return out[0] if single else out


class ExternalContext:
    """Precomputed per-token vectors, served by example id."""

    def __init__(self, entries: Dict[str, Tuple[List[str], np.ndarray]]) -> None:
        self._entries = entries
        widths = {int(v.shape[1]) for _, v in entries.values() if v.size}
        if len(widths) > 1:
            raise AlignmentError(f"inconsistent vector widths {sorted(widths)}")
        self.dim = widths.pop() if widths else 0

    def __contains__(self, ex_id: object) -> bool:
        return ex_id in self._entries

    @property
    def ids(self) -> List[str]:
        return list(self._entries)

    def tokens(self, ex_id: str) -> List[str]:
        return list(self._get(ex_id)[0])

    def _get(self, ex_id: str) -> Tuple[List[str], np.ndarray]:
        if ex_id not in self._entries:
            raise ContextError(f"no external context for id {ex_id!r}")
        return self._entries[ex_id]

    def vectors(self, ex_id: str, expected_n: Optional[int] = None) -> torch.Tensor:
        _, vecs = self._get(ex_id)
        if expected_n is not None and vecs.shape[0] != expected_n:
            raise AlignmentError(
                f"id {ex_id!r}: {vecs.shape[0]} vectors for {expected_n} tokens"
            )
        return torch.as_tensor(vecs, dtype=torch.float64)

    def stack(self, ex_id: str, expected_n: Optional[int] = None) -> LayerStack:
        """The stored layer duplicated as layers L-1 and L (L = 2); no framing."""
        h = self.vectors(ex_id, expected_n)
        n = h.shape[0]
        return LayerStack(
            layers=[h, h, h],
            special_mask=torch.zeros(n, dtype=torch.bool),
            token_mask=torch.ones(n, dtype=torch.bool),
        )


def load_external_context(
    path: Path | str, expected_dim: Optional[int] = None
) -> ExternalContext:
    """Read ``{id, tokens, vectors}`` JSON-lines into an :class:`ExternalContext`.

    Each example needs one vector per token, all of the same width (and equal to
    ``expected_dim`` when given); otherwise :class:`AlignmentError`.
    """
    entries: Dict[str, Tuple[List[str], np.ndarray]] = {}
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
                ex_id = str(row["id"])
                tokens = [str(t) for t in row["tokens"]]
                vectors = row["vectors"]
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise ContextError(
                    f"line {lineno}: malformed context row ({e})"
                ) from None
            if len(vectors) != len(tokens):
                raise AlignmentError(
                    f"line {lineno}: id {ex_id!r} has {len(vectors)} vectors "
                    f"for {len(tokens)} tokens"
                )
            widths = {len(v) for v in vectors}
            if len(widths) > 1 or (
                expected_dim is not None and widths and widths != {expected_dim}
            ):
                raise AlignmentError(
                    f"line {lineno}: id {ex_id!r} has vector widths {sorted(widths)}"
                )
            width = widths.pop() if widths else (expected_dim or 0)
            entries[ex_id] = (
                tokens,
                np.asarray(vectors, dtype=np.float64).reshape(len(tokens), width),
            )
    return ExternalContext(entries)
