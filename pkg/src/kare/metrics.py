"""Confusion matrices, precision/recall/F1 and comparison reports.

All scores are percentages in [0, 100]. Per-class precision or recall with an
empty denominator is 0. Aggregate F1 is the harmonic mean of the aggregate
precision and recall, under each of the ``macro``, ``micro`` and ``weighted``
schemes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np
from sklearn.metrics import confusion_matrix

from kare.corpus import LABELS, RelationLabel
from kare.errors import MetricsError

AVERAGINGS = ("weighted", "macro", "micro")


def _index(label: RelationLabel | int) -> int:
    return label.index if isinstance(label, RelationLabel) else int(label)


def confusion(
    preds: Sequence[RelationLabel | int], golds: Sequence[RelationLabel | int]
) -> np.ndarray:
    """4×4 counts, rows = gold, columns = predicted."""
    if len(preds) != len(golds):
        raise MetricsError(f"length mismatch: {len(preds)} vs {len(golds)}")
    if not preds:
        return np.zeros((len(LABELS), len(LABELS)), dtype=np.int64)
    return confusion_matrix(
        [_index(g) for g in golds],
        [_index(p) for p in preds],
        labels=list(range(len(LABELS))),
    ).astype(np.int64)


def harmonic_f1(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class ClassScores:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class Metrics:
    precision: float
    recall: float
    f1: float
    averaging: str = "weighted"
    per_class: Dict[str, ClassScores] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, object]:
        return {
            "averaging": self.averaging,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "per_class": {
                name: {
                    "precision": s.precision,
                    "recall": s.recall,
                    "f1": s.f1,
                    "support": s.support,
                }
                for name, s in self.per_class.items()
            },
        }


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.zeros_like(num, dtype=np.float64)
    np.divide(num, den, out=out, where=den > 0)
    return out


def prf(matrix: np.ndarray, averaging: str = "weighted") -> Metrics:
    """Per-class and aggregate scores from a confusion matrix."""
    if averaging not in AVERAGINGS:
        raise MetricsError(f"averaging must be one of {', '.join(AVERAGINGS)}")
    m = np.asarray(matrix, dtype=np.float64)
    total = m.sum()
    if total <= 0:
        raise MetricsError("cannot score an empty confusion matrix")
    tp = np.diag(m)
    support = m.sum(axis=1)
    precision = _safe_div(tp, m.sum(axis=0))
    recall = _safe_div(tp, support)
    f1 = _safe_div(2 * precision * recall, precision + recall)
    per_class = {
        label.value: ClassScores(
            float(100 * precision[i]),
            float(100 * recall[i]),
            float(100 * f1[i]),
            int(support[i]),
        )
        for i, label in enumerate(LABELS)
    }
    if averaging == "micro":
        p = r = float(tp.sum() / total)
    elif averaging == "macro":
        p, r = float(precision.mean()), float(recall.mean())
    else:
        weights = support / total
        p, r = float(precision @ weights), float(recall @ weights)
    return Metrics(
        precision=100 * p,
        recall=100 * r,
        f1=harmonic_f1(100 * p, 100 * r),
        averaging=averaging,
        per_class=per_class,
    )


@dataclass(frozen=True)
class ReportRow:
    name: str
    metrics: Metrics
    delta_precision: float
    delta_recall: float
    delta_f1: float


@dataclass
class Report:
    reference: str
    rows: List[ReportRow]

    def text(self) -> str:
        header = (
            f"{'variant':24s} {'P':>7s} {'R':>7s} {'F1':>7s} "
            f"{'ΔP':>7s} {'ΔR':>7s} {'ΔF1':>7s}"
        )
        lines = [header, "-" * len(header)]
        for row in self.rows:
            m = row.metrics
            lines.append(
                f"{row.name:24s} {m.precision:7.2f} {m.recall:7.2f} {m.f1:7.2f} "
                f"{row.delta_precision:+7.2f} {row.delta_recall:+7.2f} "
                f"{row.delta_f1:+7.2f}"
            )
        return "\n".join(lines)

    def to_dict(self) -> Dict[str, object]:
        return {
            "reference": self.reference,
            "variants": [
                {
                    "name": row.name,
                    "precision": row.metrics.precision,
                    "recall": row.metrics.recall,
                    "f1": row.metrics.f1,
                    "averaging": row.metrics.averaging,
                    "delta_precision": row.delta_precision,
                    "delta_recall": row.delta_recall,
                    "delta_f1": row.delta_f1,
                }
                for row in self.rows
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def report(variants: Sequence[Tuple[str, Metrics]], reference: str) -> Report:
    """Each variant's scores with signed deltas against ``reference``."""
    by_name = dict(variants)
    if reference not in by_name:
        raise MetricsError(f"reference variant {reference!r} not in the report")
    ref = by_name[reference]
    rows = [
        ReportRow(
            name,
            m,
            m.precision - ref.precision,
            m.recall - ref.recall,
            m.f1 - ref.f1,
        )
        for name, m in variants
    ]
    return Report(reference, rows)


@dataclass(frozen=True)
class ErrorRow:
    id: str
    gold: RelationLabel
    predicted: RelationLabel
    probability: float
    text: str


def format_errors(rows: Sequence[ErrorRow]) -> str:
    """Misclassified examples grouped by (gold, predicted), most frequent first."""
    groups: Dict[Tuple[RelationLabel, RelationLabel], List[ErrorRow]] = {}
    for row in rows:
        groups.setdefault((row.gold, row.predicted), []).append(row)
    ordered = sorted(
        groups.items(), key=lambda kv: (-len(kv[1]), kv[0][0].index, kv[0][1].index)
    )
    lines: List[str] = []
    for (gold, pred), members in ordered:
        lines.append(f"{gold.value} -> {pred.value} ({len(members)})")
        for row in members:
            lines.append(f"  {row.id}\t{row.probability:.3f}\t{row.text}")
    return "\n".join(lines)
