"""Word-embedding lookup, entity-relative positions and input composition.

Each token gets a word vector ``e_i`` plus two position vectors: its signed distance
to the cannabis mention and to the depression mention, both looked up in one shared
matrix ``P`` of ``2 * clip + 1`` rows. The input row is ``e_i ⊕ P^c_i ⊕ P^d_i``.

Positions are computed on the masked sequence, where each entity is one token.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from kare.errors import EmbeddingParseError, SpanError
from kare.lexicon import MASK_TOKENS, MaskedTweet

UNK = "<unk>"
SPECIAL_TOKENS = (MASK_TOKENS["cannabis"], MASK_TOKENS["depression"], UNK)
SPECIAL_NOISE = 0.01


@dataclass
class EmbeddingTable:
    """Vocabulary plus a V×d matrix; out-of-vocabulary tokens map to ``<unk>``."""

    vocab: Dict[str, int]
    matrix: np.ndarray

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[1])

    def __len__(self) -> int:
        return len(self.vocab)

    def index(self, token: str) -> int:
        return self.vocab.get(token, self.vocab[UNK])

    def encode(self, tokens: Sequence[str]) -> List[int]:
        return [self.index(t) for t in tokens]

    def vector(self, token: str) -> np.ndarray:
        return self.matrix[self.index(token)]

    @property
    def tokens(self) -> List[str]:
        return sorted(self.vocab, key=self.vocab.__getitem__)


def _with_specials(
    tokens: List[str], rows: List[np.ndarray], dim: int, seed: int
) -> EmbeddingTable:
    rng = np.random.default_rng(seed)
    mean = np.mean(rows, axis=0) if rows else np.zeros(dim)
    vocab = {t: i for i, t in enumerate(tokens)}
    for special in SPECIAL_TOKENS:
        if special in vocab:
            continue
        vocab[special] = len(rows)
        rows.append(mean + rng.uniform(-SPECIAL_NOISE, SPECIAL_NOISE, size=dim))
    matrix = np.asarray(rows, dtype=np.float64).reshape(len(rows), dim)
    return EmbeddingTable(vocab=vocab, matrix=matrix)


def load_word_embeddings(path: Path | str, dim: int, seed: int = 13) -> EmbeddingTable:
    """Read a text embedding file (optional ``V d`` header, then ``token v1 … vd``).

    The mask tokens and ``<unk>`` are appended, each initialized to the mean of the
    loaded vectors plus uniform noise in ±0.01. Raises
    :class:`EmbeddingParseError` with the line number on a dimension mismatch.
    """
    tokens: List[str] = []
    rows: List[np.ndarray] = []
    seen: set[str] = set()
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            parts = raw.rstrip().split(" ")
            if not parts or parts == [""]:
                continue
            if (
                lineno == 1
                and len(parts) == 2
                and all(p.isdigit() for p in parts)
                and int(parts[1]) == dim
                and dim != 1
            ):
                continue
            token, values = parts[0], parts[1:]
            if len(values) != dim:
                raise EmbeddingParseError(
                    f"expected {dim} values for {token!r}, got {len(values)}", lineno
                )
            try:
                vec = np.array([float(v) for v in values], dtype=np.float64)
            except ValueError:
                raise EmbeddingParseError(f"non-numeric value for {token!r}", lineno)
            if not np.all(np.isfinite(vec)):
                raise EmbeddingParseError(f"non-finite value for {token!r}", lineno)
            if token in seen:
                continue
            seen.add(token)
            tokens.append(token)
            rows.append(vec)
    return _with_specials(tokens, rows, dim, seed)


def build_embedding_table(
    token_lists: Iterable[Sequence[str]], dim: int, seed: int = 13
) -> EmbeddingTable:
    """Vocabulary from training tokens with Glorot-uniform rows."""
    vocab_tokens = sorted({t for tokens in token_lists for t in tokens})
    vocab_tokens = [t for t in vocab_tokens if t not in SPECIAL_TOKENS]
    rng = np.random.default_rng(seed)
    bound = float(np.sqrt(6.0 / (max(len(vocab_tokens), 1) + dim)))
    rows = [rng.uniform(-bound, bound, size=dim) for _ in vocab_tokens]
    return _with_specials(vocab_tokens, rows, dim, seed)


def position_sequence(n: int, start: int, end: Optional[int] = None) -> List[int]:
    """Signed distance of each of ``n`` tokens to the span ``start..end`` (inclusive).

    ``i - start`` before the span, 0 inside, ``i - end`` after it.
    """
    if end is None:
        end = start
    if not 0 <= start <= end < n:
        raise SpanError(f"invalid span {start}..{end} for length {n}")
    return [i - start if i < start else (i - end if i > end else 0) for i in range(n)]


class PositionEmbedding(nn.Module):
    """Shared matrix P indexed by relative distance clamped to ``[-clip, clip]``."""

    def __init__(self, clip: int, dim: int) -> None:
        super().__init__()
        self.clip = clip
        self.dim = dim
        self.weight = nn.Parameter(torch.empty(2 * clip + 1, dim, dtype=torch.float64))
        nn.init.xavier_uniform_(self.weight)

    def row(self, distance: int) -> torch.Tensor:
        return self.weight[max(-self.clip, min(self.clip, distance)) + self.clip]

    def forward(self, values: torch.Tensor) -> torch.Tensor:
        idx = values.clamp(-self.clip, self.clip) + self.clip
        return self.weight[idx]


def embed_positions(seq: Sequence[int], P: PositionEmbedding) -> torch.Tensor:
    """n×d_p matrix whose row i is ``P[clamp(seq[i])]``."""
    return P(torch.as_tensor(list(seq), dtype=torch.long))


def compose_input(
    masked: MaskedTweet, table: EmbeddingTable, P: Optional[PositionEmbedding]
) -> torch.Tensor:
    """Input matrix x with rows ``e_i ⊕ P^c_i ⊕ P^d_i`` (just ``e_i`` without P)."""
    n = len(masked.tokens)
    for name, idx in (
        ("cannabis", masked.cannabis_index),
        ("depression", masked.depression_index),
    ):
        if not 0 <= idx < n or masked.tokens[idx] != MASK_TOKENS[name]:
            raise SpanError(f"missing {MASK_TOKENS[name]} token at index {idx}")
    e = torch.as_tensor(table.matrix[table.encode(masked.tokens)], dtype=torch.float64)
    if P is None:
        return e
    pc = embed_positions(position_sequence(n, masked.cannabis_index), P)
    pd = embed_positions(position_sequence(n, masked.depression_index), P)
    return torch.cat([e, pc, pd], dim=-1)


class WordEmbedding(nn.Module):
    """Lookup in E; the special-token rows are always trainable.

    ``weight`` holds every other row and follows ``trainable`` (frozen pre-trained
    vectors by default); ``special`` holds the rows of :data:`SPECIAL_TOKENS`.
    """

    def __init__(self, table: EmbeddingTable, trainable: bool = False) -> None:
        super().__init__()
        matrix = torch.as_tensor(table.matrix, dtype=torch.float64)
        special_ids = [table.vocab[t] for t in SPECIAL_TOKENS]
        word_ids = sorted(set(range(len(table))) - set(special_ids))
        self.weight = nn.Parameter(matrix[word_ids].clone(), requires_grad=trainable)
        self.special = nn.Parameter(matrix[special_ids].clone())
        # token id -> row of cat(weight, special)
        order = torch.as_tensor(word_ids + special_ids, dtype=torch.long)
        self.register_buffer("rows", torch.argsort(order), persistent=False)

    def forward(self, token_ids: torch.Tensor) -> torch.Tensor:
        table = torch.cat([self.weight, self.special])
        return F.embedding(self.rows[token_ids], table)

    def matrix(self) -> np.ndarray:
        """The full V×d table in token-id order."""
        with torch.no_grad():
            full = torch.cat([self.weight, self.special])[self.rows]
        return full.numpy().copy()
