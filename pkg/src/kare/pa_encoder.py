"""Entity position-aware encoder: multi-window convolution plus attention pooling.

The convolution runs a bank of filters for each window size over a zero-padded
input (left ``(m-1)//2``, right ``m//2``) so every window keeps the sequence
length, applies ``tanh`` and concatenates all filter outputs per position into
``h_i``. Attention then scores each position with

    u_i = vᵀ tanh(W_h h_i + W_q q + W_c P^c_i + W_d P^d_i)

where ``q`` is the mean of the ``h_i`` over true tokens; ``α = softmax(u)`` and
``R = Σ α_j h_j``. Vanilla attention drops the two position terms.

All functions accept batched tensors ``(B, n, ·)`` with a boolean ``mask`` marking
true tokens, or a single unbatched example ``(n, ·)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import torch
import torch.nn.functional as F
from torch import nn

from kare.errors import ShapeError


@dataclass
class AttentionTrace:
    """Per-token attention weights of one example (exportable as JSON)."""

    alphas: List[float]
    tokens: List[str] = field(default_factory=list)
    predicted: Optional[str] = None
    gold: Optional[str] = None

    def to_dict(self) -> Dict[str, object]:
        return {
            "tokens": self.tokens,
            "alphas": self.alphas,
            "predicted": self.predicted,
            "gold": self.gold,
        }


def format_trace(trace: AttentionTrace, width: int = 8) -> str:
    """One-line text heatmap: each token followed by a bar proportional to α."""
    peak = max(trace.alphas) if trace.alphas else 1.0
    cells = []
    tokens = trace.tokens or [f"#{i}" for i in range(len(trace.alphas))]
    for tok, a in zip(tokens, trace.alphas):
        bar = "█" * max(0, round(width * a / peak)) if peak > 0 else ""
        cells.append(f"{tok}[{a:.3f}]{bar}")
    return " ".join(cells)


def _linear(n_in: int, n_out: int) -> nn.Linear:
    layer = nn.Linear(n_in, n_out, bias=False, dtype=torch.float64)
    nn.init.xavier_uniform_(layer.weight)
    return layer


class FilterBank(nn.Module):
    """``filters`` filters per window size, concatenated per position."""

    def __init__(self, input_width: int, windows: Sequence[int], filters: int) -> None:
        super().__init__()
        if not windows or any(m < 1 for m in windows):
            raise ShapeError(f"window sizes must be >= 1, got {list(windows)}")
        self.input_width = input_width
        self.windows = tuple(windows)
        self.filters = filters
        self.convs = nn.ModuleList(
            nn.Conv1d(input_width, filters, m, dtype=torch.float64) for m in windows
        )
        for conv in self.convs:
            nn.init.xavier_uniform_(conv.weight)
            nn.init.zeros_(conv.bias)

    @property
    def output_width(self) -> int:
        return self.filters * len(self.windows)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        # padded rows must read as zeros so batching matches single-example padding
        x = (x * mask.unsqueeze(-1).to(x.dtype)).transpose(1, 2)
        outs = []
        for m, conv in zip(self.windows, self.convs):
            left, right = (m - 1) // 2, m // 2
            outs.append(torch.tanh(conv(F.pad(x, (left, right)))))
        return torch.cat(outs, dim=1).transpose(1, 2)


def _batch(t: torch.Tensor, dims: int) -> Tuple[torch.Tensor, bool]:
    if t.dim() == dims - 1:
        return t.unsqueeze(0), True
    if t.dim() != dims:
        raise ShapeError(f"expected a {dims - 1}D or {dims}D tensor, got {t.dim()}D")
    return t, False


def _full_mask(h: torch.Tensor) -> torch.Tensor:
    return torch.ones(h.shape[:2], dtype=torch.bool, device=h.device)


def conv_encode(
    x: torch.Tensor, bank: FilterBank, mask: Optional[torch.Tensor] = None
) -> torch.Tensor:
    """Same-length tanh convolution of ``x`` for every window; n×d_h (or B×n×d_h)."""
    xb, single = _batch(x, 3)
    if xb.shape[-1] != bank.input_width:
        raise ShapeError(
            f"input width {xb.shape[-1]} != filter width {bank.input_width}"
        )
    h = bank(xb, _full_mask(xb) if mask is None else mask)
    return h[0] if single else h


def aggregate_vector(
    h: torch.Tensor, mask: Optional[torch.Tensor] = None
) -> torch.Tensor:
    """Mean of the hidden states over true tokens (padding excluded)."""
    hb, single = _batch(h, 3)
    if hb.shape[1] == 0:
        raise ShapeError("cannot aggregate an empty sequence")
    m = (_full_mask(hb) if mask is None else mask).to(hb.dtype).unsqueeze(-1)
    count = m.sum(dim=1)
    if bool((count == 0).any()):
        raise ShapeError("cannot aggregate a sequence with no true tokens")
    q = (hb * m).sum(dim=1) / count
    return q[0] if single else q


class AttentionParams(nn.Module):
    """W_h, W_q (d_a×d_h), W_c, W_d (d_a×d_p, absent for vanilla) and v (d_a)."""

    def __init__(
        self, hidden_dim: int, attn_dim: int, position_dim: Optional[int] = None
    ) -> None:
        super().__init__()
        self.hidden_dim = hidden_dim
        self.attn_dim = attn_dim
        self.W_h = _linear(hidden_dim, attn_dim)
        self.W_q = _linear(hidden_dim, attn_dim)
        self.W_c: Optional[nn.Linear] = None
        self.W_d: Optional[nn.Linear] = None
        if position_dim is not None:
            self.W_c = _linear(position_dim, attn_dim)
            self.W_d = _linear(position_dim, attn_dim)
        self.v = _linear(attn_dim, 1)

    @property
    def position_aware(self) -> bool:
        return self.W_c is not None

    def scores(
        self,
        h: torch.Tensor,
        q: torch.Tensor,
        pc: Optional[torch.Tensor],
        pd: Optional[torch.Tensor],
        mask: torch.Tensor,
    ) -> torch.Tensor:
        if h.shape[-1] != self.hidden_dim:
            raise ShapeError(f"hidden width {h.shape[-1]} != {self.hidden_dim}")
        if q.shape[-1] != self.hidden_dim:
            raise ShapeError(f"aggregate width {q.shape[-1]} != {self.hidden_dim}")
        pre = self.W_h(h) + self.W_q(q).unsqueeze(1)
        if pc is not None or pd is not None:
            if self.W_c is None or self.W_d is None or pc is None or pd is None:
                raise ShapeError("position terms need W_c, W_d, P^c and P^d together")
            if pc.shape[:2] != h.shape[:2] or pd.shape[:2] != h.shape[:2]:
                raise ShapeError("position matrices must align with the hidden states")
            pre = pre + self.W_c(pc) + self.W_d(pd)
        u = self.v(torch.tanh(pre)).squeeze(-1)
        return u.masked_fill(~mask, float("-inf"))

    def forward(
        self,
        h: torch.Tensor,
        q: torch.Tensor,
        pc: Optional[torch.Tensor],
        pd: Optional[torch.Tensor],
        mask: torch.Tensor,
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        alpha = torch.softmax(self.scores(h, q, pc, pd, mask), dim=-1)
        R = torch.bmm(alpha.unsqueeze(1), h).squeeze(1)
        return alpha, R


def _attend(
    h: torch.Tensor,
    q: torch.Tensor,
    pc: Optional[torch.Tensor],
    pd: Optional[torch.Tensor],
    params: AttentionParams,
    tokens: Optional[Sequence[str]],
) -> Tuple[AttentionTrace, torch.Tensor]:
    hb, single = _batch(h, 3)
    if not single:
        raise ShapeError("attention traces are built for one example at a time")
    qb = q.unsqueeze(0)
    pcb = pc.unsqueeze(0) if pc is not None else None
    pdb = pd.unsqueeze(0) if pd is not None else None
    alpha, R = params(hb, qb, pcb, pdb, _full_mask(hb))
    trace = AttentionTrace(alphas=alpha[0].tolist(), tokens=list(tokens or []))
    return trace, R[0]


def position_attention(
    h: torch.Tensor,
    q: torch.Tensor,
    pc: torch.Tensor,
    pd: torch.Tensor,
    params: AttentionParams,
    tokens: Optional[Sequence[str]] = None,
) -> Tuple[AttentionTrace, torch.Tensor]:
    """Entity position-aware attention over one example; returns (trace, R)."""
    if not params.position_aware:
        raise ShapeError("params carry no W_c/W_d; use vanilla_attention")
    return _attend(h, q, pc, pd, params, tokens)


def vanilla_attention(
    h: torch.Tensor,
    q: torch.Tensor,
    params: AttentionParams,
    tokens: Optional[Sequence[str]] = None,
) -> Tuple[AttentionTrace, torch.Tensor]:
    """Attention without the entity position terms; returns (trace, R).

    Any W_c/W_d carried by ``params`` are ignored.
    """
    return _attend(h, q, None, None, params, tokens)
