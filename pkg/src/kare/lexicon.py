"""Ontology-lexicon entity locator: find and mask cannabis/depression mentions.

The lexicon is a flat stand-in for the drug-abuse ontology: each row maps a surface
term (a concept name, slang term, synonym or street name, 1..4 tokens) to its entity
class. Matching scans every n-gram of a tokenized tweet, scores it against every term
by Levenshtein distance, and resolves overlapping candidates with a fixed order:

1. lowest edit distance;
2. longest span (more tokens);
3. leftmost start.

The first accepted span of each class is the canonical mention that gets masked;
any other accepted (non-overlapping) span is reported with ``extra=True``.

File format (UTF-8, tab-separated, ``#`` comments)::

    term<TAB>class[<TAB>concept]
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from rapidfuzz.distance import Levenshtein

from kare.errors import (
    DuplicateTermError,
    EntityClassError,
    LexiconParseError,
    MissingEntityError,
    OverlapError,
    SpanError,
)

CANNABIS = "cannabis"
DEPRESSION = "depression"
ENTITY_CLASSES: Tuple[str, str] = (CANNABIS, DEPRESSION)
MASK_TOKENS: Dict[str, str] = {CANNABIS: "<cannabis>", DEPRESSION: "<depression>"}

TOY_LEXICON = Path(__file__).parent / "lexicons" / "toy.tsv"

_URL = re.compile(r"^(?:https?://|www\.)\S+$", re.IGNORECASE)
_HANDLE = re.compile(r"^[@#]\w+$")
_PUNCT = "!\"$%&'()*+,-./:;<=>?[\\]^_`{|}~…“”‘’"


@dataclass(frozen=True)
class MatcherConfig:
    """Knobs of the n-gram matcher (``lexicon.*`` config keys)."""

    max_ngram: int = 4
    max_distance: int = 1
    normalized_threshold: Optional[float] = 0.25
    case_folding: bool = True


@dataclass(frozen=True)
class EntitySpan:
    """A located mention. ``start``/``end`` are inclusive token indices."""

    entity_class: str
    start: int
    end: int
    matched_term: str
    distance: int
    extra: bool = False

    @property
    def length(self) -> int:
        return self.end - self.start + 1

    def overlaps(self, other: "EntitySpan") -> bool:
        return self.start <= other.end and other.start <= self.end

    def to_dict(self) -> Dict[str, object]:
        return {
            "class": self.entity_class,
            "start": self.start,
            "end": self.end,
            "term": self.matched_term,
            "distance": self.distance,
            "extra": self.extra,
        }


@dataclass(frozen=True)
class MaskedTweet:
    tokens: List[str]
    cannabis_index: int
    depression_index: int
    original: List[str]
    spans: List[EntitySpan] = field(default_factory=list)

    def to_dict(self) -> Dict[str, object]:
        return {
            "tokens": self.tokens,
            "cannabis_index": self.cannabis_index,
            "depression_index": self.depression_index,
            "spans": [s.to_dict() for s in self.spans],
        }


class Lexicon:
    """Immutable term → entity-class dictionary."""

    def __init__(
        self,
        entries: Dict[str, str],
        provenance: Optional[Dict[str, str]] = None,
    ) -> None:
        for term, cls in entries.items():
            if not term:
                raise LexiconParseError("empty term")
            if cls not in ENTITY_CLASSES:
                raise EntityClassError(f"unknown entity class {cls!r} for {term!r}")
        self._entries = dict(entries)
        self._provenance = dict(provenance or {})
        self._by_class: Dict[str, List[str]] = {c: [] for c in ENTITY_CLASSES}
        for term in sorted(self._entries):
            self._by_class[self._entries[term]].append(term)

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, term: object) -> bool:
        return term in self._entries

    @property
    def entries(self) -> Dict[str, str]:
        return dict(self._entries)

    def entity_class(self, term: str) -> str:
        return self._entries[term]

    def concept(self, term: str) -> Optional[str]:
        return self._provenance.get(term)

    def terms(self, entity_class: Optional[str] = None) -> List[str]:
        if entity_class is None:
            return sorted(self._entries)
        return list(self._by_class[entity_class])

    @property
    def longest_term(self) -> int:
        return max((len(t.split(" ")) for t in self._entries), default=0)


def normalize_term(term: str, case_folding: bool = True) -> str:
    """Collapse whitespace to single spaces (and lowercase unless disabled)."""
    text = " ".join(term.split())
    return text.lower() if case_folding else text


def tokenize(text: str, case_folding: bool = True) -> List[str]:
    """Split a tweet into tokens.

    Lowercases, splits on whitespace, then peels leading and trailing punctuation
    into one-character tokens. URLs, @mentions and #hashtags stay whole; interior
    punctuation ("it's", "clash!weed") is kept.
    """
    if case_folding:
        text = text.lower()
    tokens: List[str] = []
    for chunk in text.split():
        if _URL.match(chunk) or _HANDLE.match(chunk):
            tokens.append(chunk)
            continue
        lead: List[str] = []
        while chunk and chunk[0] in _PUNCT:
            lead.append(chunk[0])
            chunk = chunk[1:]
        trail: List[str] = []
        while chunk and chunk[-1] in _PUNCT:
            trail.append(chunk[-1])
            chunk = chunk[:-1]
        tokens.extend(lead)
        if chunk:
            tokens.append(chunk)
        tokens.extend(reversed(trail))
    return tokens


def load_lexicon(path: Path | str, case_folding: bool = True) -> Lexicon:
    """Read a ``term<TAB>class[<TAB>concept]`` file into a :class:`Lexicon`.

    Raises :class:`LexiconParseError` (with the line number) for malformed rows,
    :class:`DuplicateTermError` when a normalized term repeats and
    :class:`EntityClassError` for a class outside cannabis/depression.
    """
    entries: Dict[str, str] = {}
    provenance: Dict[str, str] = {}
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) not in (2, 3):
                raise LexiconParseError(
                    f"expected 2 or 3 tab-separated columns, got {len(cols)}", lineno
                )
            term = normalize_term(cols[0], case_folding)
            cls = cols[1].strip().lower()
            if not term:
                raise LexiconParseError("empty term", lineno)
            if cls not in ENTITY_CLASSES:
                raise EntityClassError(f"unknown entity class {cls!r}", lineno)
            if term in entries:
                raise DuplicateTermError(f"duplicate term {term!r}", lineno)
            entries[term] = cls
            if len(cols) == 3 and cols[2].strip():
                provenance[term] = cols[2].strip()
    return Lexicon(entries, provenance)


def levenshtein(a: str, b: str) -> int:
    """Unit-cost insert/delete/substitute edit distance."""
    return int(Levenshtein.distance(a, b))


def _within(distance: int, a: str, b: str, cfg: MatcherConfig) -> bool:
    if distance > cfg.max_distance:
        return False
    if cfg.normalized_threshold is not None:
        return distance <= cfg.normalized_threshold * max(len(a), len(b))
    return True


def _candidates(
    tokens: Sequence[str], lexicon: Lexicon, cfg: MatcherConfig
) -> List[EntitySpan]:
    terms = lexicon.terms()
    out: List[EntitySpan] = []
    n = len(tokens)
    for size in range(1, cfg.max_ngram + 1):
        for start in range(0, n - size + 1):
            gram = " ".join(tokens[start : start + size])
            if cfg.case_folding:
                gram = gram.lower()
            best: Optional[Tuple[int, str]] = None
            for term in terms:
                if abs(len(term) - len(gram)) > cfg.max_distance:
                    continue
                d = Levenshtein.distance(gram, term, score_cutoff=cfg.max_distance)
                if not _within(d, gram, term, cfg):
                    continue
                if best is None or (d, term) < best:
                    best = (d, term)
            if best is not None:
                d, term = best
                out.append(
                    EntitySpan(
                        entity_class=lexicon.entity_class(term),
                        start=start,
                        end=start + size - 1,
                        matched_term=term,
                        distance=d,
                    )
                )
    return out


def locate_entities(
    tokens: Sequence[str], lexicon: Lexicon, cfg: MatcherConfig = MatcherConfig()
) -> List[EntitySpan]:
    """Locate lexicon mentions in ``tokens``; returns spans sorted by start.

    The best span of each class has ``extra=False``; other accepted matches are
    returned with ``extra=True``. An empty list is a valid result.
    """
    if not tokens:
        raise SpanError("cannot locate entities in an empty token list")
    ranked = sorted(
        _candidates(tokens, lexicon, cfg),
        key=lambda s: (s.distance, -s.length, s.start),
    )
    accepted: List[EntitySpan] = []
    seen_classes: set[str] = set()
    for cand in ranked:
        if any(cand.overlaps(a) for a in accepted):
            continue
        extra = cand.entity_class in seen_classes
        seen_classes.add(cand.entity_class)
        accepted.append(
            EntitySpan(
                cand.entity_class,
                cand.start,
                cand.end,
                cand.matched_term,
                cand.distance,
                extra=extra,
            )
        )
    return sorted(accepted, key=lambda s: s.start)


def canonical_spans(
    spans: Iterable[EntitySpan],
) -> Tuple[Optional[EntitySpan], Optional[EntitySpan]]:
    """The (cannabis, depression) spans that get masked, or None when absent."""
    best: Dict[str, EntitySpan] = {}
    for s in spans:
        if not s.extra and s.entity_class not in best:
            best[s.entity_class] = s
    return best.get(CANNABIS), best.get(DEPRESSION)


def mask_entities(
    tokens: Sequence[str],
    cannabis: Optional[EntitySpan],
    depression: Optional[EntitySpan],
) -> MaskedTweet:
    """Collapse each entity span into its single mask token."""
    found = [s for s in (cannabis, depression) if s is not None]
    if cannabis is None or depression is None:
        missing = CANNABIS if cannabis is None else DEPRESSION
        raise MissingEntityError(f"no {missing} entity located", found)
    for span in (cannabis, depression):
        if not 0 <= span.start <= span.end < len(tokens):
            raise SpanError(
                f"span {span.start}..{span.end} outside 0..{len(tokens) - 1}"
            )
    if cannabis.overlaps(depression):
        raise OverlapError(
            f"cannabis span {cannabis.start}..{cannabis.end} overlaps "
            f"depression span {depression.start}..{depression.end}"
        )
    first, second = sorted((cannabis, depression), key=lambda s: s.start)
    out: List[str] = list(tokens[: first.start])
    out.append(MASK_TOKENS[first.entity_class])
    first_index = len(out) - 1
    out.extend(tokens[first.end + 1 : second.start])
    out.append(MASK_TOKENS[second.entity_class])
    second_index = len(out) - 1
    out.extend(tokens[second.end + 1 :])
    index = {first.entity_class: first_index, second.entity_class: second_index}
    return MaskedTweet(
        tokens=out,
        cannabis_index=index[CANNABIS],
        depression_index=index[DEPRESSION],
        original=list(tokens),
        spans=[cannabis, depression],
    )


def locate_and_mask(
    text: str, lexicon: Lexicon, cfg: MatcherConfig = MatcherConfig()
) -> MaskedTweet:
    """Tokenize, locate and mask; the pipeline-level entry point.

    Raises :class:`MissingEntityError` (carrying every span found) when either
    class is absent.
    """
    tokens = tokenize(text, cfg.case_folding)
    if not tokens:
        raise MissingEntityError("empty text")
    spans = locate_entities(tokens, lexicon, cfg)
    cannabis, depression = canonical_spans(spans)
    if cannabis is None or depression is None:
        missing = CANNABIS if cannabis is None else DEPRESSION
        raise MissingEntityError(f"no {missing} entity located", spans)
    masked = mask_entities(tokens, cannabis, depression)
    return MaskedTweet(
        tokens=masked.tokens,
        cannabis_index=masked.cannabis_index,
        depression_index=masked.depression_index,
        original=masked.original,
        spans=spans,
    )
