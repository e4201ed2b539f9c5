"""Templated synthetic tweets for demos and learning checks.

Each tweet plants one cannabis and one depression term from the lexicon in a
template whose cue words carry the label: "helps"/"for" for Reason,
"making"/"causes" for Effect, "lack of"/"need" for Addiction, and neutral wording
for Ambiguous.
"""

from __future__ import annotations

import random
from typing import Dict, List, Mapping, Optional

from kare.corpus import (
    CORPUS_COUNTS,
    LABELS,
    Corpus,
    Example,
    RelationLabel,
    allocate,
)
from kare.errors import DatasetError
from kare.lexicon import CANNABIS, DEPRESSION, Lexicon

TEMPLATES: Dict[RelationLabel, tuple[str, ...]] = {
    RelationLabel.REASON: (
        "{c} helps with my {d}",
        "been using {c} for my {d} and it helps",
        "{c} really helps when i am {d}",
        "my doctor said {c} for {d}",
    ),
    RelationLabel.EFFECT: (
        "{c} is making my {d} worse",
        "pretty sure {c} causes my {d}",
        "{c} keeps making me {d}",
        "every time {c} causes {d} for me",
    ),
    RelationLabel.ADDICTION: (
        "lack of {c} leaves me {d}",
        "i need {c} or i get {d}",
        "without {c} i am {d} , lack of it hurts",
        "need my {c} , so {d} today",
    ),
    RelationLabel.AMBIGUOUS: (
        "{c} and {d} are trending today",
        "saw a thread about {c} and {d}",
        "{d} {c} what a day",
        "reading about {c} then {d} on the news",
    ),
}

OPENERS = ("", "honestly", "lol", "ok")
CLOSERS = ("", "tbh", "again", "!")


def generate_synthetic(
    n: int,
    seed: int,
    lexicon: Lexicon,
    ratio: Optional[Mapping[RelationLabel, float]] = None,
) -> Corpus:
    """``n`` labeled tweets whose class counts follow ``ratio`` (largest remainder).

    The default ratio is the class distribution of the annotated corpus.
    """
    if n < 4:
        raise DatasetError(f"synthetic corpus needs n >= 4, got {n}")
    cannabis = lexicon.terms(CANNABIS)
    depression = lexicon.terms(DEPRESSION)
    if not cannabis or not depression:
        raise DatasetError("lexicon must hold cannabis and depression terms")
    weights = ratio or CORPUS_COUNTS
    total = float(sum(weights.get(label, 0) for label in LABELS))
    if total <= 0:
        raise DatasetError("class ratio must have a positive total")
    counts = allocate(n, [weights.get(label, 0) / total for label in LABELS])
    rng = random.Random(seed)
    labels: List[RelationLabel] = [
        label for label, k in zip(LABELS, counts) for _ in range(k)
    ]
    rng.shuffle(labels)
    width = len(str(n))
    examples: List[Example] = []
    for i, label in enumerate(labels):
        body = rng.choice(TEMPLATES[label]).format(
            c=rng.choice(cannabis), d=rng.choice(depression)
        )
        words = [rng.choice(OPENERS), body, rng.choice(CLOSERS)]
        text = " ".join(w for w in words if w)
        examples.append(Example(f"syn-{i:0{width}d}", text, label))
    return Corpus(examples)
