"""Ablation harness: retrain with a component removed and compare to the full model."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from kare.config import ModelConfig
from kare.context_encoder import ExternalContext
from kare.corpus import Corpus
from kare.embedding import EmbeddingTable
from kare.errors import ConfigError
from kare.lexicon import Lexicon
from kare.metrics import Metrics, Report, report
from kare.model import GatedKBert, parameter_census
from kare.training import evaluate, train

logger = logging.getLogger(__name__)

FULL = "full"

VARIANTS: Dict[str, Mapping[str, str]] = {
    FULL: {},
    "-context": {"model.use_context": "false"},
    "-position_attention": {"model.use_position_attention": "false"},
    "-position_embedding": {"model.use_position_embedding": "false"},
    "-cnn": {"model.use_cnn": "false"},
    "-gated_fusion": {"model.fusion": "concat"},
    "vanilla_attention": {"model.attention": "vanilla"},
    "bert": {
        "model.use_entity_branch": "false",
        "model.use_context": "true",
        "context.positions": "false",
        "context.pool": "mean",
    },
    "bert_pe": {
        "model.use_entity_branch": "false",
        "model.use_context": "true",
        "model.use_position_embedding": "true",
        "context.positions": "true",
        "context.pool": "mean",
    },
    "bert_pe_pa": {
        "model.use_entity_branch": "false",
        "model.use_context": "true",
        "model.use_position_embedding": "true",
        "model.attention": "position",
        "context.positions": "true",
        "context.pool": "attention",
    },
}

TABLES: Dict[str, Tuple[str, ...]] = {
    "ablation": (
        FULL,
        "-context",
        "-position_attention",
        "-position_embedding",
        "-cnn",
    ),
    "fusion": (FULL, "-gated_fusion"),
    "attention": (FULL, "vanilla_attention"),
    "baselines": ("bert", "bert_pe", "bert_pe_pa", FULL),
}
TABLES["all"] = tuple(dict.fromkeys(v for names in TABLES.values() for v in names))


def variant_names(table: str) -> Tuple[str, ...]:
    if table not in TABLES:
        raise ConfigError(f"unknown variant table {table!r}; use {', '.join(TABLES)}")
    return TABLES[table]


def variant_config(base: ModelConfig, name: str) -> ModelConfig:
    """``base`` with the overrides of variant ``name`` applied and validated."""
    if name not in VARIANTS:
        raise ConfigError(f"unknown variant {name!r}")
    cfg = base.with_values(dict(VARIANTS[name]))
    cfg.validate()
    return cfg


def removed_tensors(
    full: Mapping[str, Tuple[int, ...]], variant: Mapping[str, Tuple[int, ...]]
) -> List[str]:
    """Tensors of ``full`` that the variant lacks or holds with another shape."""
    return sorted(n for n, shape in full.items() if variant.get(n) != shape)


def census(
    base: ModelConfig,
    table: EmbeddingTable,
    names: Sequence[str],
    context_dim: Optional[int] = None,
) -> Dict[str, Dict[str, Tuple[int, ...]]]:
    """Trainable-tensor census of every named variant (untrained models)."""
    return {
        name: parameter_census(
            GatedKBert(variant_config(base, name), table, context_dim)
        )
        for name in names
    }


@dataclass
class AblationResult:
    report: Report
    metrics: Dict[str, Metrics]


def ablate(
    base: ModelConfig,
    train_corpus: Corpus,
    dev_corpus: Optional[Corpus],
    test_corpus: Corpus,
    lexicon: Lexicon,
    table: str = "ablation",
    averaging: str = "weighted",
    external: Optional[ExternalContext] = None,
    jobs: int = 1,
) -> AblationResult:
    """Train and score each variant of ``table``; deltas are against the full model."""
    scores: List[Tuple[str, Metrics]] = []
    for name in variant_names(table):
        cfg = variant_config(base, name)
        logger.info(f"variant {name}: training")
        ckpt = train(cfg, train_corpus, dev_corpus, lexicon, external)
        result = evaluate(ckpt, test_corpus, lexicon, jobs=jobs, external=external)
        metrics = result.metrics(averaging)
        logger.info(f"variant {name}: F1 {metrics.f1:.2f}")
        scores.append((name, metrics))
    return AblationResult(report(scores, FULL), dict(scores))
