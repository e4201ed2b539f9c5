"""Gated fusion of the entity and context representations, and the classifier.

    h_R = tanh(W_R R)    h_B = tanh(W_B B)    g = sigmoid(W_g [R ⊕ B])
    F   = g ⊙ h_R + (1 - g) ⊙ h_B
    p   = softmax(W F + a)

With one branch only, F is that branch's ``tanh`` projection. With
``mode="concat"`` the classifier reads ``R ⊕ B`` directly.
"""

from __future__ import annotations

import logging
from typing import Optional, Tuple

import torch
from torch import nn

from kare.corpus import LABELS, RelationLabel
from kare.errors import ShapeError

logger = logging.getLogger(__name__)

EPSILON = 1e-12


def _linear(n_in: int, n_out: int, bias: bool = False) -> nn.Linear:
    layer = nn.Linear(n_in, n_out, bias=bias, dtype=torch.float64)
    nn.init.xavier_uniform_(layer.weight)
    if layer.bias is not None:
        nn.init.zeros_(layer.bias)
    return layer


class FusionParams(nn.Module):
    """W_R (d_f×d_h), W_B (d_f×h_b), W_g (d_f×(d_h+h_b)), classifier W (4×d_f), a.

    ``hidden_dim`` or ``context_dim`` is None when that branch is ablated; the
    tensors that only serve the missing branch (and the gate) are then absent.
    """

    def __init__(
        self,
        hidden_dim: Optional[int],
        context_dim: Optional[int],
        fusion_dim: int,
        mode: str = "gated",
        num_labels: int = len(LABELS),
    ) -> None:
        super().__init__()
        if hidden_dim is None and context_dim is None:
            raise ShapeError("fusion needs at least one branch")
        self.hidden_dim = hidden_dim
        self.context_dim = context_dim
        self.mode = mode
        self.W_R: Optional[nn.Linear] = None
        self.W_B: Optional[nn.Linear] = None
        self.W_g: Optional[nn.Linear] = None
        if mode == "concat":
            width = (hidden_dim or 0) + (context_dim or 0)
        else:
            if hidden_dim is not None:
                self.W_R = _linear(hidden_dim, fusion_dim)
            if context_dim is not None:
                self.W_B = _linear(context_dim, fusion_dim)
            if hidden_dim is not None and context_dim is not None:
                self.W_g = _linear(hidden_dim + context_dim, fusion_dim, bias=True)
            width = fusion_dim
        self.classifier = _linear(width, num_labels, bias=True)

    @property
    def gated(self) -> bool:
        return self.W_g is not None

    def fuse(
        self, R: Optional[torch.Tensor], B: Optional[torch.Tensor]
    ) -> Tuple[Optional[torch.Tensor], torch.Tensor]:
        """(g, F) for batched or single vectors; g is None without a gate."""
        if (R is None) != (self.hidden_dim is None) or (B is None) != (
            self.context_dim is None
        ):
            raise ShapeError("branch inputs do not match the fusion layout")
        if R is not None and R.shape[-1] != self.hidden_dim:
            raise ShapeError(f"R width {R.shape[-1]} != {self.hidden_dim}")
        if B is not None and B.shape[-1] != self.context_dim:
            raise ShapeError(f"B width {B.shape[-1]} != {self.context_dim}")
        if self.mode == "concat":
            parts = [t for t in (R, B) if t is not None]
            return None, torch.cat(parts, dim=-1)
        if B is None:
            assert self.W_R is not None and R is not None
            return None, torch.tanh(self.W_R(R))
        if R is None:
            assert self.W_B is not None
            return None, torch.tanh(self.W_B(B))
        assert self.W_R is not None and self.W_B is not None and self.W_g is not None
        h_R = torch.tanh(self.W_R(R))
        h_B = torch.tanh(self.W_B(B))
        g = torch.sigmoid(self.W_g(torch.cat([R, B], dim=-1)))
        return g, g * h_R + (1 - g) * h_B

    def logits(self, F: torch.Tensor) -> torch.Tensor:
        if F.shape[-1] != self.classifier.in_features:
            raise ShapeError(
                f"fused width {F.shape[-1]} != {self.classifier.in_features}"
            )
        return self.classifier(F)


def gated_fuse(
    R: torch.Tensor, B: torch.Tensor, p: FusionParams
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Gate vector g and fused vector F for one (R, B) pair."""
    if not p.gated:
        raise ShapeError("params carry no gate; gated_fuse needs both branches")
    g, F = p.fuse(R, B)
    assert g is not None
    return g, F


def classify(F: torch.Tensor, p: FusionParams) -> torch.Tensor:
    """Relation probabilities ``softmax(W F + a)``."""
    return torch.softmax(p.logits(F), dim=-1)


def loss(probs: torch.Tensor, gold: RelationLabel | int) -> torch.Tensor:
    """Cross-entropy ``-log probs[gold]``, clamped at 1e-12."""
    index = gold.index if isinstance(gold, RelationLabel) else int(gold)
    p = probs[index]
    if float(p) < EPSILON:
        logger.warning(
            f"probability {float(p):.3g} of gold label clamped to {EPSILON:g}"
        )
    return -torch.log(p.clamp(min=EPSILON))
