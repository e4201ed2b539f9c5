"""Finite-difference check of the analytic gradients.

Every trainable element is nudged by ±eps and the central difference of the mean
batch loss is compared with the autograd gradient.
"""

from __future__ import annotations

import random
from typing import Dict, List, Tuple

import torch

from kare.config import ModelConfig
from kare.corpus import LABELS
from kare.embedding import build_embedding_table
from kare.lexicon import MASK_TOKENS, MaskedTweet
from kare.model import Batch, Encoded, GatedKBert, make_batch
from kare.training import backward, batch_loss

TINY_WORDS = ("it", "helps", "my", "so", "much", "makes", "need", "feel", "the")

TINY_CONFIG = {
    "embedding.dim": "8",
    "embedding.trainable": "true",
    "position.dim": "2",
    "position.clip": "5",
    "cnn.windows": "2,3",
    "cnn.filters": "3",
    "attention.dim": "4",
    "surrogate.layers": "1",
    "surrogate.heads": "2",
    "surrogate.hidden": "8",
    "surrogate.ff": "16",
    "surrogate.max_len": "8",
    "context.layer": "0",
    "fusion.dim": "4",
}


def relative_error(a: float, b: float, floor: float = 1e-4) -> float:
    """``|a - b| / max(|a|, |b|, floor)``; the floor keeps near-zero gradients from
    turning float64 roundoff into large ratios."""
    return abs(a - b) / max(abs(a), abs(b), floor)


def check_gradients(
    model: GatedKBert, batch: Batch, eps: float = 1e-5, floor: float = 1e-4
) -> Dict[str, float]:
    """Max relative error between analytic and numeric gradient, per tensor."""
    model.eval()
    analytic = backward(model, batch)
    errors: Dict[str, float] = {}
    params = dict(model.named_parameters())
    with torch.no_grad():
        for name, grad in analytic.items():
            flat = params[name].view(-1)
            worst = 0.0
            for i in range(flat.numel()):
                saved = float(flat[i])
                flat[i] = saved + eps
                up = float(batch_loss(model, batch))
                flat[i] = saved - eps
                down = float(batch_loss(model, batch))
                flat[i] = saved
                numeric = (up - down) / (2 * eps)
                worst = max(
                    worst, relative_error(float(grad.view(-1)[i]), numeric, floor)
                )
            errors[name] = worst
    return errors


def tiny_setup(
    seed: int = 13, examples: int = 3, overrides: Dict[str, str] | None = None
) -> Tuple[GatedKBert, Batch]:
    """A random model of the smallest useful size and a labeled batch for it."""
    rng = random.Random(seed)
    cfg = ModelConfig().with_values({**TINY_CONFIG, **(overrides or {})})
    cfg.validate()
    items: List[Encoded] = []
    for k in range(examples):
        n = rng.randint(3, 6)
        tokens = [rng.choice(TINY_WORDS) for _ in range(n)]
        ci, di = rng.sample(range(n), 2)
        tokens[ci] = MASK_TOKENS["cannabis"]
        tokens[di] = MASK_TOKENS["depression"]
        masked = MaskedTweet(tokens, ci, di, list(tokens))
        items.append(Encoded(f"t{k}", masked, LABELS[rng.randrange(len(LABELS))]))
    table = build_embedding_table([TINY_WORDS], cfg.embedding.dim, seed)
    torch.manual_seed(seed)
    model = GatedKBert(cfg, table)
    return model, make_batch(items, table)
