"""Training, prediction and evaluation.

Training is mini-batch Adam on the mean cross-entropy with early stopping on dev
weighted F1. Everything random (parameter init, shuffling, dropout) is derived
from ``train.seed``, so a run is reproducible bit for bit.
"""

from __future__ import annotations

import logging
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from kare.checkpoint import Checkpoint
from kare.config import ModelConfig
from kare.context_encoder import ExternalContext
from kare.corpus import LABELS, Corpus, RelationLabel, split_hash
from kare.embedding import EmbeddingTable, build_embedding_table, load_word_embeddings
from kare.errors import ContextError, DatasetError, MissingEntityError
from kare.lexicon import Lexicon, MatcherConfig, locate_and_mask
from kare.metrics import AVERAGINGS, ErrorRow, Metrics, confusion, prf
from kare.model import Batch, Encoded, GatedKBert, make_batch
from kare.pa_encoder import AttentionTrace

logger = logging.getLogger(__name__)


def prepare(
    corpus: Corpus, lexicon: Lexicon, cfg: MatcherConfig
) -> Tuple[List[Encoded], List[str]]:
    """Mask every example; ids whose entities cannot be located are skipped."""
    items: List[Encoded] = []
    skipped: List[str] = []
    for ex in corpus:
        try:
            masked = locate_and_mask(ex.text, lexicon, cfg)
        except MissingEntityError as e:
            logger.warning(f"skipping {ex.id}: {e}")
            skipped.append(ex.id)
            continue
        items.append(Encoded(ex.id, masked, ex.label))
    return items, skipped


def build_table(cfg: ModelConfig, items: Sequence[Encoded]) -> EmbeddingTable:
    if cfg.embedding.path:
        return load_word_embeddings(
            cfg.embedding.path, cfg.embedding.dim, cfg.train.seed
        )
    return build_embedding_table(
        (it.masked.tokens for it in items), cfg.embedding.dim, cfg.train.seed
    )


def make_optimizer(model: GatedKBert, cfg: ModelConfig) -> torch.optim.Adam:
    """Adam with the context encoder in its own learning-rate group."""
    context_ids = (
        {id(p) for p in model.surrogate.parameters()}
        if model.surrogate is not None
        else set()
    )
    trainable = [p for p in model.parameters() if p.requires_grad]
    groups = [
        {"params": [p for p in trainable if id(p) not in context_ids]},
        {
            "params": [p for p in trainable if id(p) in context_ids],
            "lr": cfg.train.context_lr,
        },
    ]
    return torch.optim.Adam([g for g in groups if g["params"]], lr=cfg.train.lr)


def class_weights(items: Sequence[Encoded], scheme: str) -> Optional[torch.Tensor]:
    """Inverse-frequency weights ``N / (K * count)``; absent labels weigh 0."""
    if scheme == "none":
        return None
    counts = torch.zeros(len(LABELS), dtype=torch.float64)
    for it in items:
        assert it.label is not None
        counts[it.label.index] += 1
    weights = torch.zeros_like(counts)
    present = counts > 0
    weights[present] = len(items) / (int(present.sum()) * counts[present])
    return weights


def batch_loss(
    model: GatedKBert, batch: Batch, weights: Optional[torch.Tensor] = None
) -> torch.Tensor:
    if batch.labels is None:
        raise DatasetError("batch carries no gold labels")
    return F.cross_entropy(model(batch).logits, batch.labels, weight=weights)


def backward(model: GatedKBert, batch: Batch) -> Dict[str, torch.Tensor]:
    """Gradients of the mean batch loss for every trainable tensor."""
    model.zero_grad(set_to_none=True)
    batch_loss(model, batch).backward()
    grads: Dict[str, torch.Tensor] = {}
    for name, p in model.named_parameters():
        if p.requires_grad:
            grads[name] = (
                p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)
            )
    return grads


def _chunks(items: Sequence[Encoded], size: int) -> List[List[Encoded]]:
    return [list(items[i : i + size]) for i in range(0, len(items), size)]


@dataclass
class _Inference:
    probs: torch.Tensor
    alphas: List[List[float]]


def _alphas(model: GatedKBert, batch: Batch) -> Tuple[torch.Tensor, List[List[float]]]:
    out = model(batch)
    lengths = batch.mask.sum(dim=1).tolist()
    rows: List[List[float]] = []
    for i, n in enumerate(lengths):
        if out.alpha is not None:
            rows.append(out.alpha[i, :n].tolist())
        elif out.context_alpha is not None:
            a = out.context_alpha[i].tolist()[:n]
            rows.append(a + [0.0] * (n - len(a)))
        else:
            rows.append([1.0 / n] * n)
    return out.probs, rows


def infer(
    model: GatedKBert,
    table: EmbeddingTable,
    items: Sequence[Encoded],
    external: Optional[ExternalContext] = None,
    batch_size: int = 32,
    jobs: int = 1,
) -> _Inference:
    """Probabilities and attention weights for ``items``, in input order."""
    model.eval()

    def run(chunk: List[Encoded]) -> Tuple[torch.Tensor, List[List[float]]]:
        with torch.no_grad():
            return _alphas(model, make_batch(chunk, table, external))

    chunks = _chunks(items, batch_size)
    if jobs > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, chunks))
    else:
        results = [run(c) for c in chunks]
    probs = torch.cat([r[0] for r in results]) if results else torch.empty(0, 4)
    alphas = [a for r in results for a in r[1]]
    return _Inference(probs, alphas)


def _predicted(probs: torch.Tensor) -> List[RelationLabel]:
    # argmax returns the first maximum, i.e. the lowest label index on ties
    return [RelationLabel.from_index(int(i)) for i in torch.argmax(probs, dim=-1)]


def score(
    model: GatedKBert,
    table: EmbeddingTable,
    items: Sequence[Encoded],
    external: Optional[ExternalContext] = None,
    batch_size: int = 32,
) -> float:
    """Weighted F1 of ``model`` on ``items``."""
    inference = infer(model, table, items, external, batch_size)
    golds = [it.label for it in items if it.label is not None]
    return prf(confusion(_predicted(inference.probs), golds)).f1


def train(
    cfg: ModelConfig,
    train_corpus: Corpus,
    dev_corpus: Optional[Corpus],
    lexicon: Lexicon,
    external: Optional[ExternalContext] = None,
) -> Checkpoint:
    """Train a model and return the checkpoint with the best dev F1.

    Without a dev corpus the final epoch is kept. Training stops early after
    ``train.patience`` epochs without dev improvement, or once dev F1 is 100.
    """
    cfg.validate()
    if len(train_corpus) == 0:
        raise DatasetError("empty training corpus")
    items, skipped = prepare(train_corpus, lexicon, cfg.lexicon)
    if not items:
        raise DatasetError("no training example has both entities located")
    dev_items: List[Encoded] = []
    if dev_corpus is not None:
        dev_items, _ = prepare(dev_corpus, lexicon, cfg.lexicon)
        if not dev_items:
            logger.warning("dev corpus has no usable example; keeping the last epoch")
    needs_external = cfg.model.use_context and cfg.context.provider == "external"
    if needs_external and external is None:
        raise ContextError("context.provider = external needs --context vectors")

    seed = cfg.train.seed
    torch.manual_seed(seed)
    rng = random.Random(seed)
    table = build_table(cfg, items)
    context_dim = external.dim if external is not None else None
    model = GatedKBert(cfg, table, context_dim=context_dim)
    optimizer = make_optimizer(model, cfg)
    weights = class_weights(items, cfg.train.class_weighting)
    size = cfg.train.batch_size

    best_f1 = -1.0
    best_epoch = 0
    best_state: Optional[Dict[str, torch.Tensor]] = None
    stale = 0
    epoch = 0
    for epoch in range(1, cfg.train.epochs + 1):
        model.train()
        order = list(range(len(items)))
        rng.shuffle(order)
        total = 0.0
        for chunk in _chunks([items[i] for i in order], size):
            batch = make_batch(chunk, table, external)
            optimizer.zero_grad(set_to_none=True)
            loss = batch_loss(model, batch, weights)
            loss.backward()
            optimizer.step()
            total += float(loss) * len(chunk)
            logger.debug(f"epoch {epoch} batch loss {float(loss):.6f}")
        mean_loss = total / len(items)
        if not dev_items:
            logger.info(f"epoch {epoch}: loss {mean_loss:.4f}")
            continue
        f1 = score(model, table, dev_items, external, size)
        logger.info(f"epoch {epoch}: loss {mean_loss:.4f} dev F1 {f1:.2f}")
        if f1 > best_f1:
            best_f1, best_epoch, stale = f1, epoch, 0
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        else:
            stale += 1
        if best_f1 >= 100.0:
            break
        if stale >= cfg.train.patience:
            logger.warning(
                f"early stopping at epoch {epoch}: no dev gain for {stale} epochs"
            )
            break
    if best_state is not None:
        model.load_state_dict(best_state)
    else:
        best_epoch = epoch
    model.eval()
    metadata = {
        "seed": seed,
        "epochs": epoch,
        "best_epoch": best_epoch,
        "dev_f1": best_f1 if best_state is not None else None,
        "split_hash": split_hash(train_corpus),
        "dev_hash": split_hash(dev_corpus) if dev_corpus is not None else None,
        "skipped": len(skipped),
        "context_dim": context_dim,
    }
    return Checkpoint(config=cfg, model=model, table=table, metadata=metadata)


@dataclass
class Prediction:
    label: RelationLabel
    probs: List[float]
    trace: AttentionTrace


def predict(
    ckpt: Checkpoint,
    text: str,
    lexicon: Lexicon,
    external: Optional[ExternalContext] = None,
    ex_id: str = "input",
) -> Prediction:
    """Label one raw tweet; raises MissingEntityError when an entity is absent."""
    masked = locate_and_mask(text, lexicon, ckpt.config.lexicon)
    inference = infer(ckpt.model, ckpt.table, [Encoded(ex_id, masked)], external)
    probs = inference.probs[0]
    label = _predicted(inference.probs)[0]
    trace = AttentionTrace(
        alphas=inference.alphas[0],
        tokens=list(masked.tokens),
        predicted=label.value,
    )
    return Prediction(label, probs.tolist(), trace)


@dataclass
class EvalResult:
    ids: List[str]
    golds: List[RelationLabel]
    preds: List[RelationLabel]
    probs: List[List[float]]
    traces: List[AttentionTrace]
    skipped: List[str] = field(default_factory=list)

    @property
    def matrix(self) -> np.ndarray:
        return confusion(self.preds, self.golds)

    def metrics(self, averaging: str = "weighted") -> Metrics:
        return prf(self.matrix, averaging)

    def all_metrics(self) -> Dict[str, Metrics]:
        return {a: self.metrics(a) for a in AVERAGINGS}

    def errors(self) -> List[ErrorRow]:
        rows: List[ErrorRow] = []
        for i, (gold, pred) in enumerate(zip(self.golds, self.preds)):
            if gold != pred:
                rows.append(
                    ErrorRow(
                        self.ids[i],
                        gold,
                        pred,
                        self.probs[i][pred.index],
                        " ".join(self.traces[i].tokens),
                    )
                )
        return rows


def evaluate(
    ckpt: Checkpoint,
    corpus: Corpus,
    lexicon: Lexicon,
    jobs: int = 1,
    external: Optional[ExternalContext] = None,
) -> EvalResult:
    """Predict every example of ``corpus``; results follow the input order."""
    items, skipped = prepare(corpus, lexicon, ckpt.config.lexicon)
    if not items:
        raise DatasetError("no evaluable example: every entity lookup failed")
    inference = infer(
        ckpt.model, ckpt.table, items, external, ckpt.config.train.batch_size, jobs
    )
    preds = _predicted(inference.probs)
    golds = [it.label for it in items if it.label is not None]
    traces = [
        AttentionTrace(
            alphas=a,
            tokens=list(it.masked.tokens),
            predicted=p.value,
            gold=it.label.value if it.label else None,
        )
        for it, a, p in zip(items, inference.alphas, preds)
    ]
    return EvalResult(
        ids=[it.id for it in items],
        golds=golds,
        preds=preds,
        probs=inference.probs.tolist(),
        traces=traces,
        skipped=skipped,
    )
