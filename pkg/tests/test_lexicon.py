"""Tests for kare.lexicon: tokenizer, lexicon loading, fuzzy location and masking."""

import random

import pytest

from kare.errors import (
    DuplicateTermError,
    EntityClassError,
    LexiconParseError,
    MissingEntityError,
    OverlapError,
    SpanError,
)
from kare.lexicon import (
    CANNABIS,
    DEPRESSION,
    TOY_LEXICON,
    EntitySpan,
    Lexicon,
    MatcherConfig,
    canonical_spans,
    levenshtein,
    load_lexicon,
    locate_and_mask,
    locate_entities,
    mask_entities,
    normalize_term,
    tokenize,
)


# pairwise edit distance >= 3 and no term is a word of another
PLANT_TERMS = {
    "cannabis": CANNABIS,
    "marijuana": CANNABIS,
    "cbd oil": CANNABIS,
    "hopeless": DEPRESSION,
    "depressed": DEPRESSION,
    "sadness": DEPRESSION,
}
FILLER = ["the", "today", "very", "and", "i", "got", "home", "late", "!"]


def _word(rng, low, high, alphabet):
    return "".join(rng.choice(alphabet) for _ in range(rng.randint(low, high)))


def _edit_distance(a, b):
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        row = [i]
        for j, cb in enumerate(b, start=1):
            row.append(min(prev[j] + 1, row[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = row
    return prev[-1]


def _one_edit(rng, term):
    letters = [i for i, ch in enumerate(term) if ch != " "]
    i = rng.choice(letters)
    op = rng.choice(["sub", "del", "ins"])
    if op == "sub":
        return term[:i] + "z" + term[i + 1 :]
    if op == "del" and term[i - 1 : i] != " " and term[i + 1 : i + 2] != " ":
        return term[:i] + term[i + 1 :]
    return term[:i] + "q" + term[i:]


@pytest.fixture
def lexicon() -> Lexicon:
    return load_lexicon(TOY_LEXICON)


class TestTokenize:
    def test_peels_punctuation(self):
        tokens = tokenize("Weed helps, honestly!")
        assert tokens == ["weed", "helps", ",", "honestly", "!"]

    def test_keeps_urls_and_handles(self):
        tokens = tokenize("see https://x.co/a @user #420")
        assert tokens == ["see", "https://x.co/a", "@user", "#420"]

    def test_keeps_interior_punctuation(self):
        assert tokenize("it's fine") == ["it's", "fine"]

    def test_case_folding_off(self):
        assert tokenize("CBD Oil", case_folding=False) == ["CBD", "Oil"]

    def test_normalize_term(self):
        assert normalize_term("  Mary   JANE ") == "mary jane"


class TestLoadLexicon:
    def test_toy_lexicon(self, lexicon):
        assert "cbd oil" in lexicon
        assert lexicon.entity_class("hopeless") == DEPRESSION
        assert lexicon.concept("cbd") == "Cannabidiol"
        assert lexicon.longest_term == 4
        assert set(lexicon.terms(CANNABIS)).isdisjoint(lexicon.terms(DEPRESSION))

    def test_comments_and_blank_lines_skipped(self, tmp_path):
        p = tmp_path / "lex.tsv"
        p.write_text("# header\n\nweed\tcannabis\nsad\tdepression\n", encoding="utf-8")
        assert len(load_lexicon(p)) == 2

    def test_duplicate_after_normalization(self, tmp_path):
        p = tmp_path / "lex.tsv"
        p.write_text("Weed\tcannabis\nweed\tcannabis\n", encoding="utf-8")
        with pytest.raises(DuplicateTermError) as exc:
            load_lexicon(p)
        assert exc.value.line == 2

    def test_unknown_class(self, tmp_path):
        p = tmp_path / "lex.tsv"
        p.write_text("weed\tcannabis\nbeer\talcohol\n", encoding="utf-8")
        with pytest.raises(EntityClassError) as exc:
            load_lexicon(p)
        assert exc.value.line == 2

    def test_bad_column_count(self, tmp_path):
        p = tmp_path / "lex.tsv"
        p.write_text("weed cannabis\n", encoding="utf-8")
        with pytest.raises(LexiconParseError, match="line 1"):
            load_lexicon(p)


class TestLevenshtein:
    def test_single_deletion(self):
        assert levenshtein("marijuanna", "marijuana") == 1

    def test_identity_and_empty(self):
        assert levenshtein("weed", "weed") == 0
        assert levenshtein("", "thc") == 3

    def test_metric_axioms_and_agrees_with_table(self):
        rng = random.Random(0)
        for _ in range(300):
            a, b, c = (_word(rng, 0, 8, "abc ") for _ in range(3))
            assert levenshtein(a, b) == levenshtein(b, a) == _edit_distance(a, b)
            assert levenshtein(a, c) <= levenshtein(a, b) + levenshtein(b, c)
            assert (levenshtein(a, b) == 0) == (a == b)


class TestLocateEntities:
    def test_misspelling_within_one_edit(self, lexicon):
        spans = locate_entities(["feeling", "depresed"], lexicon)
        assert [(s.entity_class, s.start, s.end, s.distance) for s in spans] == [
            (DEPRESSION, 1, 1, 1)
        ]
        assert spans[0].matched_term == "depressed"

    def test_longest_span_wins_among_exact_matches(self, lexicon):
        spans = locate_entities(["cbd", "oil", "helps", "my", "depression"], lexicon)
        cannabis, depression = canonical_spans(spans)
        assert (cannabis.start, cannabis.end) == (0, 1)
        assert cannabis.matched_term == "cbd oil"
        assert (depression.start, depression.end) == (4, 4)

    def test_exact_match_beats_fuzzy_overlap(self, lexicon):
        # "smoke weed" (distance 0, two tokens) covers the single "weed"
        spans = locate_entities(tokenize("i smoke weed when hopeless"), lexicon)
        cannabis, _ = canonical_spans(spans)
        assert cannabis.matched_term == "smoke weed"
        assert all(not s.extra for s in spans)

    def test_second_mention_is_extra(self, lexicon):
        spans = locate_entities(tokenize("weed and thc , i feel hopeless"), lexicon)
        extras = [s for s in spans if s.extra]
        assert [s.matched_term for s in extras] == ["thc"]
        cannabis, _ = canonical_spans(spans)
        assert cannabis.matched_term == "weed"

    def test_short_terms_need_exact_match(self, lexicon):
        # one edit on a three-letter term exceeds the normalized threshold
        assert locate_entities(["thx"], lexicon) == []

    def test_threshold_can_be_disabled(self, lexicon):
        cfg = MatcherConfig(normalized_threshold=None)
        spans = locate_entities(["thx"], lexicon, cfg)
        assert [s.matched_term for s in spans] == ["thc"]

    def test_empty_tokens(self, lexicon):
        with pytest.raises(SpanError):
            locate_entities([], lexicon)

    def test_no_match_is_empty(self, lexicon):
        assert locate_entities(["nice", "day"], lexicon) == []

    def test_planted_terms_are_recalled(self):
        rng = random.Random(1)
        lex = Lexicon(PLANT_TERMS)
        for _ in range(1000):
            term = rng.choice(sorted(PLANT_TERMS))
            planted = _one_edit(rng, term) if rng.random() < 0.5 else term
            gram = planted.split(" ")
            tokens = [rng.choice(FILLER) for _ in range(rng.randint(0, 8))]
            at = rng.randint(0, len(tokens))
            tokens[at:at] = gram
            spans = locate_entities(tokens, lex)
            hit = [s for s in spans if (s.start, s.end) == (at, at + len(gram) - 1)]
            assert len(hit) == 1, (planted, tokens, spans)
            assert hit[0].matched_term == term
            assert hit[0].entity_class == PLANT_TERMS[term]
            assert hit[0].distance == _edit_distance(planted, term) <= 1
            assert not any(s.extra for s in spans)


class TestMaskEntities:
    def test_collapses_multi_token_span(self):
        tokens = ["cbd", "oil", "helps", "my", "depression"]
        c = EntitySpan(CANNABIS, 0, 1, "cbd oil", 0)
        d = EntitySpan(DEPRESSION, 4, 4, "depression", 0)
        masked = mask_entities(tokens, c, d)
        assert masked.tokens == ["<cannabis>", "helps", "my", "<depression>"]
        assert (masked.cannabis_index, masked.depression_index) == (0, 3)
        assert masked.original == tokens

    def test_depression_first(self):
        tokens = ["so", "depressed", "need", "weed"]
        c = EntitySpan(CANNABIS, 3, 3, "weed", 0)
        d = EntitySpan(DEPRESSION, 1, 1, "depressed", 0)
        masked = mask_entities(tokens, c, d)
        assert masked.tokens == ["so", "<depression>", "need", "<cannabis>"]
        assert (masked.cannabis_index, masked.depression_index) == (3, 1)

    def test_overlap(self):
        c = EntitySpan(CANNABIS, 0, 1, "x", 0)
        d = EntitySpan(DEPRESSION, 1, 2, "y", 0)
        with pytest.raises(OverlapError):
            mask_entities(["a", "b", "c"], c, d)

    def test_span_out_of_range(self):
        c = EntitySpan(CANNABIS, 0, 0, "x", 0)
        d = EntitySpan(DEPRESSION, 3, 3, "y", 0)
        with pytest.raises(SpanError):
            mask_entities(["a", "b"], c, d)

    def test_missing_class(self):
        c = EntitySpan(CANNABIS, 0, 0, "weed", 0)
        with pytest.raises(MissingEntityError) as exc:
            mask_entities(["weed"], c, None)
        assert exc.value.spans == [c]


class TestLocateAndMask:
    def test_reason_tweet(self, lexicon):
        text = (
            "Not saying im cured, but i feel less depressed lately, "
            "could be my CBD oil supplement."
        )
        masked = locate_and_mask(text, lexicon)
        terms = {s.entity_class: s.matched_term for s in masked.spans}
        assert terms == {CANNABIS: "cbd oil", DEPRESSION: "depressed"}
        assert masked.tokens[masked.cannabis_index] == "<cannabis>"
        assert masked.tokens[masked.depression_index] == "<depression>"
        assert len(masked.tokens) == len(masked.original) - 1

    def test_missing_depression_carries_spans(self, lexicon):
        with pytest.raises(MissingEntityError) as exc:
            locate_and_mask("weed is great", lexicon)
        assert [s.matched_term for s in exc.value.spans] == ["weed"]

    def test_empty_text(self, lexicon):
        with pytest.raises(MissingEntityError):
            locate_and_mask("   ", lexicon)

    def test_to_dict(self, lexicon):
        row = locate_and_mask("weed helps my depression", lexicon).to_dict()
        assert row["tokens"] == ["<cannabis>", "helps", "my", "<depression>"]
        assert row["spans"][0]["class"] == CANNABIS
