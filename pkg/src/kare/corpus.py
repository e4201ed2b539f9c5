"""Dataset ingestion, label schema, stratified splitting and annotator agreement.

Datasets are JSON-lines with ``id``, ``text`` and ``label`` per row. Labels follow
the four-way annotation coding (1 Reason, 2 Effect, 3 Addiction, 4 Ambiguous) and
may be written by name (case-insensitive) or by code.
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
from dataclasses import dataclass, field
from enum import Enum
from itertools import combinations
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple

from sklearn.metrics import cohen_kappa_score

from kare.errors import (
    DatasetError,
    DuplicateIdError,
    KappaError,
    LabelError,
    SplitError,
)

logger = logging.getLogger(__name__)


class RelationLabel(str, Enum):
    REASON = "Reason"
    EFFECT = "Effect"
    ADDICTION = "Addiction"
    AMBIGUOUS = "Ambiguous"

    @property
    def index(self) -> int:
        return _LABEL_ORDER.index(self)

    @property
    def code(self) -> int:
        return self.index + 1

    @classmethod
    def parse(cls, value: object) -> "RelationLabel":
        """Parse a label name (any case), a 1..4 code, or a label instance."""
        if isinstance(value, RelationLabel):
            return value
        text = str(value).strip()
        if text.isdigit() and 1 <= int(text) <= len(_LABEL_ORDER):
            return _LABEL_ORDER[int(text) - 1]
        for label in _LABEL_ORDER:
            if label.value.lower() == text.lower():
                return label
        raise LabelError(f"unknown relation label {value!r}")

    @classmethod
    def from_index(cls, index: int) -> "RelationLabel":
        return _LABEL_ORDER[index]


_LABEL_ORDER: List[RelationLabel] = list(RelationLabel)
LABELS: Tuple[RelationLabel, ...] = tuple(_LABEL_ORDER)

# Class counts of the annotated cannabis-depression corpus (5885 tweets).
CORPUS_COUNTS: Dict[RelationLabel, int] = {
    RelationLabel.REASON: 3243,
    RelationLabel.EFFECT: 707,
    RelationLabel.ADDICTION: 158,
    RelationLabel.AMBIGUOUS: 1777,
}


@dataclass(frozen=True)
class Example:
    id: str
    text: str
    label: RelationLabel
    spans: Optional[List[Dict[str, object]]] = None

    def to_dict(self) -> Dict[str, object]:
        row: Dict[str, object] = {
            "id": self.id,
            "text": self.text,
            "label": self.label.value,
        }
        if self.spans is not None:
            row["spans"] = self.spans
        return row


@dataclass
class Corpus:
    examples: List[Example] = field(default_factory=list)

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for ex in self.examples:
            if ex.id in seen:
                raise DuplicateIdError(f"duplicate id {ex.id!r}")
            seen.add(ex.id)

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self) -> Iterator[Example]:
        return iter(self.examples)

    def __getitem__(self, index: int) -> Example:
        return self.examples[index]

    @property
    def ids(self) -> List[str]:
        return [ex.id for ex in self.examples]

    @property
    def labels(self) -> List[RelationLabel]:
        return [ex.label for ex in self.examples]


def load_dataset(path: Path | str) -> Corpus:
    """Load a JSON-lines dataset in file order.

    Raises :class:`LabelError` for an unknown label, :class:`DuplicateIdError` for
    a repeated id, :class:`DatasetError` for malformed rows (line number attached).
    """
    examples: List[Example] = []
    seen: set[str] = set()
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as e:
                raise DatasetError(f"invalid JSON: {e.msg}", lineno) from None
            if not isinstance(row, dict):
                raise DatasetError("row is not an object", lineno)
            for key in ("id", "text", "label"):
                if key not in row:
                    raise DatasetError(f"missing field {key!r}", lineno)
            ex_id = str(row["id"])
            text = str(row["text"])
            if not text.strip():
                raise DatasetError(f"empty text for id {ex_id!r}", lineno)
            try:
                label = RelationLabel.parse(row["label"])
            except LabelError as e:
                raise LabelError(str(e), lineno) from None
            if ex_id in seen:
                raise DuplicateIdError(f"duplicate id {ex_id!r}", lineno)
            seen.add(ex_id)
            examples.append(Example(ex_id, text, label, row.get("spans")))
    return Corpus(examples)


def write_dataset(corpus: Iterable[Example], path: Path | str) -> int:
    """Write examples as JSON-lines (UTF-8, stable key order). Returns the count."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with p.open("w", encoding="utf-8") as fh:
        for ex in corpus:
            fh.write(json.dumps(ex.to_dict(), ensure_ascii=False) + "\n")
            n += 1
    return n


def class_distribution(corpus: Iterable[Example]) -> Dict[RelationLabel, int]:
    counts = {label: 0 for label in LABELS}
    for ex in corpus:
        counts[ex.label] += 1
    return counts


def split_hash(corpus: Iterable[Example]) -> str:
    """SHA-256 over the ids in order (recorded in checkpoint metadata)."""
    h = hashlib.sha256()
    for ex in corpus:
        h.update(ex.id.encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()


def allocate(n: int, ratios: Sequence[float]) -> List[int]:
    """Largest-remainder allocation of ``n`` items; ties go to the earlier part."""
    raw = [n * r for r in ratios]
    counts = [int(x) for x in raw]
    order = sorted(range(len(ratios)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def stratified_split(
    corpus: Corpus, ratios: Sequence[float] = (0.8, 0.1, 0.1), seed: int = 13
) -> Tuple[Corpus, Corpus, Corpus]:
    """Split into (train, dev, test) preserving per-label proportions.

    Deterministic for a given ``seed``; each part keeps the corpus order. A label
    with fewer examples than parts only triggers a warning.
    """
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise SplitError(f"ratios must be three positive values, got {tuple(ratios)}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise SplitError(f"ratios must sum to 1, got {sum(ratios)}")
    rng = random.Random(seed)
    position = {ex.id: i for i, ex in enumerate(corpus)}
    parts: List[List[Example]] = [[], [], []]
    for label in LABELS:
        members = [ex for ex in corpus if ex.label == label]
        if 0 < len(members) < len(ratios):
            logger.warning(
                f"label {label.value} has {len(members)} example(s), "
                f"fewer than {len(ratios)} split parts"
            )
        rng.shuffle(members)
        start = 0
        for part, count in zip(parts, allocate(len(members), ratios)):
            part.extend(members[start : start + count])
            start += count
    ordered = [sorted(p, key=lambda ex: position[ex.id]) for p in parts]
    return Corpus(ordered[0]), Corpus(ordered[1]), Corpus(ordered[2])


# --- annotator agreement ---------------------------------------------------------
def cohen_kappa(labels_a: Sequence[object], labels_b: Sequence[object]) -> float:
    """Two-rater Cohen's kappa, (p_o - p_e) / (1 - p_e).

    When both raters use one and the same label throughout (p_e = 1) the value is
    defined as 1.0.
    """
    if len(labels_a) != len(labels_b):
        raise KappaError(f"length mismatch: {len(labels_a)} vs {len(labels_b)}")
    if not labels_a:
        raise KappaError("kappa needs at least one item")
    a = [_label_key(x) for x in labels_a]
    b = [_label_key(x) for x in labels_b]
    if len(set(a) | set(b)) == 1:
        return 1.0
    return float(cohen_kappa_score(a, b))


def _label_key(value: object) -> str:
    return value.value if isinstance(value, RelationLabel) else str(value)


def load_annotations(path: Path | str) -> Dict[str, RelationLabel]:
    """Read an ``id<TAB>label`` annotation file (``#`` comments allowed)."""
    out: Dict[str, RelationLabel] = {}
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip() or line.startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) != 2:
                raise DatasetError("expected 'id<TAB>label'", lineno)
            ex_id = cols[0].strip()
            try:
                label = RelationLabel.parse(cols[1])
            except LabelError as e:
                raise LabelError(str(e), lineno) from None
            if ex_id in out:
                raise DuplicateIdError(f"duplicate id {ex_id!r}", lineno)
            out[ex_id] = label
    return out


def paired_labels(
    a: Mapping[str, RelationLabel], b: Mapping[str, RelationLabel]
) -> Tuple[List[str], List[RelationLabel], List[RelationLabel]]:
    """Labels of the ids both annotators coded, sorted by id."""
    shared = sorted(set(a) & set(b))
    return shared, [a[i] for i in shared], [b[i] for i in shared]


@dataclass(frozen=True)
class PairAgreement:
    annotator_a: str
    annotator_b: str
    items: int
    kappa: float


def kappa_report(
    annotations: Mapping[str, Mapping[str, RelationLabel]],
) -> Tuple[List[PairAgreement], float]:
    """Pairwise kappas over shared ids for every annotator pair, and their mean."""
    pairs: List[PairAgreement] = []
    for name_a, name_b in combinations(list(annotations), 2):
        ids, la, lb = paired_labels(annotations[name_a], annotations[name_b])
        if not ids:
            raise KappaError(f"{name_a} and {name_b} share no annotated ids")
        pairs.append(PairAgreement(name_a, name_b, len(ids), cohen_kappa(la, lb)))
    if not pairs:
        raise KappaError("kappa needs at least two annotators")
    return pairs, sum(p.kappa for p in pairs) / len(pairs)


def disagreements(
    a: Mapping[str, RelationLabel], b: Mapping[str, RelationLabel]
) -> List[Tuple[str, RelationLabel, RelationLabel]]:
    """Shared ids the two annotators labeled differently (for third-coder review)."""
    ids, la, lb = paired_labels(a, b)
    return [(i, x, y) for i, x, y in zip(ids, la, lb) if x != y]


def format_kappa_report(pairs: Sequence[PairAgreement], mean: float) -> str:
    rows = [f"{'pair':30s} {'items':>6s} {'kappa':>7s}", "-" * 45]
    for p in pairs:
        name = f"{p.annotator_a} vs {p.annotator_b}"
        rows.append(f"{name:30s} {p.items:6d} {p.kappa:7.3f}")
    rows.append("-" * 45)
    rows.append(f"{'mean':30s} {'':6s} {mean:7.3f}")
    return "\n".join(rows)
