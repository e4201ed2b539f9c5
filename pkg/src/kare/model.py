"""The full relation classifier and its batching.

Two branches feed the gated fusion layer:

- the entity branch: word + entity-position embeddings, multi-window convolution
  and position-aware attention pooling into R;
- the context branch: a contextual encoder whose token states are pooled into B.

Every ablation switch of ``ModelConfig.model`` removes the tensors of the component
it turns off, so the parameter census of a variant shows exactly what it lost.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import torch
from torch import nn

from kare.config import ModelConfig
from kare.context_encoder import (
    ExternalContext,
    LayerStack,
    SurrogateEncoder,
    pool_context,
    resolve_layer,
)
from kare.corpus import RelationLabel
from kare.embedding import (
    EmbeddingTable,
    PositionEmbedding,
    WordEmbedding,
    position_sequence,
)
from kare.errors import ContextError
from kare.fusion import FusionParams
from kare.lexicon import MaskedTweet
from kare.pa_encoder import AttentionParams, FilterBank, aggregate_vector


@dataclass(frozen=True)
class Encoded:
    """A masked example ready for batching."""

    id: str
    masked: MaskedTweet
    label: Optional[RelationLabel] = None


@dataclass
class Batch:
    ids: List[str]
    tokens: List[List[str]]
    sequences: List[List[int]]
    token_ids: torch.Tensor
    mask: torch.Tensor
    cannabis_pos: torch.Tensor
    depression_pos: torch.Tensor
    labels: Optional[torch.Tensor] = None
    context_vectors: Optional[torch.Tensor] = None

    def __len__(self) -> int:
        return len(self.ids)


def make_batch(
    items: Sequence[Encoded],
    table: EmbeddingTable,
    external: Optional[ExternalContext] = None,
) -> Batch:
    """Pad a list of examples; padded slots hold ``<unk>`` and are masked out."""
    width = max(len(it.masked.tokens) for it in items)
    size = (len(items), width)
    pad = table.index("<unk>")
    token_ids = torch.full(size, pad, dtype=torch.long)
    mask = torch.zeros(size, dtype=torch.bool)
    cpos = torch.zeros(size, dtype=torch.long)
    dpos = torch.zeros(size, dtype=torch.long)
    sequences: List[List[int]] = []
    vectors: List[torch.Tensor] = []
    for i, it in enumerate(items):
        m = it.masked
        n = len(m.tokens)
        ids = table.encode(m.tokens)
        sequences.append(ids)
        token_ids[i, :n] = torch.as_tensor(ids)
        mask[i, :n] = True
        cpos[i, :n] = torch.as_tensor(position_sequence(n, m.cannabis_index))
        dpos[i, :n] = torch.as_tensor(position_sequence(n, m.depression_index))
        if external is not None:
            vectors.append(external.vectors(it.id, expected_n=n))
    context_vectors = None
    if external is not None:
        context_vectors = torch.zeros(
            len(items), width, external.dim, dtype=torch.float64
        )
        for i, v in enumerate(vectors):
            context_vectors[i, : v.shape[0]] = v
    labels = None
    if all(it.label is not None for it in items):
        labels = torch.as_tensor([it.label.index for it in items if it.label])
    return Batch(
        ids=[it.id for it in items],
        tokens=[list(it.masked.tokens) for it in items],
        sequences=sequences,
        token_ids=token_ids,
        mask=mask,
        cannabis_pos=cpos,
        depression_pos=dpos,
        labels=labels,
        context_vectors=context_vectors,
    )


@dataclass
class ModelOutput:
    logits: torch.Tensor
    alpha: Optional[torch.Tensor] = None
    context_alpha: Optional[torch.Tensor] = None
    gate: Optional[torch.Tensor] = None

    @property
    def probs(self) -> torch.Tensor:
        return torch.softmax(self.logits, dim=-1)


class GatedKBert(nn.Module):
    """Entity position-aware encoder and contextual encoder under gated fusion."""

    def __init__(
        self,
        cfg: ModelConfig,
        table: EmbeddingTable,
        context_dim: Optional[int] = None,
    ) -> None:
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        m = cfg.model
        self.words: Optional[WordEmbedding] = None
        self.positions: Optional[PositionEmbedding] = None
        self.bank: Optional[FilterBank] = None
        self.attention: Optional[AttentionParams] = None
        self.surrogate: Optional[SurrogateEncoder] = None
        self.context_attention: Optional[AttentionParams] = None

        wants_positions = m.use_entity_branch or (
            m.use_context and cfg.context.positions
        )
        if m.use_position_embedding and wants_positions:
            self.positions = PositionEmbedding(cfg.position.clip, cfg.position.dim)
        d_p = cfg.position.dim if self.positions is not None else None
        attn_positions = d_p if m.attention == "position" else None

        hidden_dim: Optional[int] = None
        if m.use_entity_branch:
            self.words = WordEmbedding(table, cfg.embedding.trainable)
            width = table.dim + (2 * d_p if d_p else 0)
            if m.use_cnn:
                self.bank = FilterBank(width, cfg.cnn.windows, cfg.cnn.filters)
                width = self.bank.output_width
            if m.use_position_attention:
                self.attention = AttentionParams(
                    width, cfg.attention.dim, attn_positions
                )
            hidden_dim = width

        pooled_dim: Optional[int] = None
        if m.use_context:
            if cfg.context.provider == "surrogate":
                self.surrogate = SurrogateEncoder(len(table), cfg.surrogate)
                h_b = cfg.surrogate.hidden
                if not cfg.context.trainable:
                    self.surrogate.requires_grad_(False)
            elif context_dim is None:
                raise ContextError("external context provider needs its vector width")
            else:
                h_b = context_dim
            pooled_dim = h_b + (2 * d_p if cfg.context.positions and d_p else 0)
            if cfg.context.pool == "attention":
                self.context_attention = AttentionParams(
                    pooled_dim, cfg.attention.dim, attn_positions
                )
        self.context_dim = context_dim

        self.fusion = FusionParams(hidden_dim, pooled_dim, cfg.fusion.dim, m.fusion)
        self.dropout = nn.Dropout(cfg.train.dropout)

    # --- branches ---------------------------------------------------------------
    def _entity(
        self,
        batch: Batch,
        pc: Optional[torch.Tensor],
        pd: Optional[torch.Tensor],
    ) -> Tuple[torch.Tensor, Optional[torch.Tensor]]:
        assert self.words is not None
        x = self.words(batch.token_ids)
        if pc is not None and pd is not None:
            x = torch.cat([x, pc, pd], dim=-1)
        h = self.bank(x, batch.mask) if self.bank is not None else x
        q = aggregate_vector(h, batch.mask)
        if self.attention is None:
            return q, None
        aware = self.attention.position_aware
        alpha, R = self.attention(
            h, q, pc if aware else None, pd if aware else None, batch.mask
        )
        return R, alpha

    def _stack(self, batch: Batch) -> LayerStack:
        if self.surrogate is not None:
            return self.surrogate(batch.sequences)
        if batch.context_vectors is None:
            raise ContextError("batch carries no external context vectors")
        h = batch.context_vectors
        return LayerStack(
            layers=[h, h, h],
            special_mask=torch.zeros_like(batch.mask),
            token_mask=batch.mask,
        )

    def _context(
        self,
        batch: Batch,
        pc: Optional[torch.Tensor],
        pd: Optional[torch.Tensor],
    ) -> Tuple[torch.Tensor, Optional[torch.Tensor]]:
        ctx = self.cfg.context
        stack = self._stack(batch)
        if not ctx.positions and self.context_attention is None:
            return pool_context(stack, ctx.layer, ctx.pool), None
        rows = stack.layers[resolve_layer(stack.num_layers, ctx.layer)]
        mask = stack.token_mask
        if self.surrogate is not None:
            # drop the begin/end columns; row j is word token j
            rows, mask = rows[:, 1:-1], mask[:, 1:-1]
        width = rows.shape[1]
        pc = pc[:, :width] if pc is not None else None
        pd = pd[:, :width] if pd is not None else None
        if ctx.positions and pc is not None and pd is not None:
            rows = torch.cat([rows, pc, pd], dim=-1)
        q = aggregate_vector(rows, mask)
        if self.context_attention is None:
            return q, None
        aware = self.context_attention.position_aware
        alpha, B = self.context_attention(
            rows, q, pc if aware else None, pd if aware else None, mask
        )
        return B, alpha

    def forward(self, batch: Batch) -> ModelOutput:
        pc = pd = None
        if self.positions is not None:
            pc = self.positions(batch.cannabis_pos)
            pd = self.positions(batch.depression_pos)
        R = alpha = None
        if self.words is not None:
            R, alpha = self._entity(batch, pc, pd)
        B = context_alpha = None
        if self.cfg.model.use_context:
            B, context_alpha = self._context(batch, pc, pd)
        g, F = self.fusion.fuse(R, B)
        logits = self.fusion.logits(self.dropout(F))
        return ModelOutput(logits, alpha, context_alpha, g)


def parameter_census(model: nn.Module) -> Dict[str, Tuple[int, ...]]:
    """Name → shape of every trainable tensor, sorted by name."""
    return {
        name: tuple(p.shape)
        for name, p in sorted(model.named_parameters())
        if p.requires_grad
    }


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)
