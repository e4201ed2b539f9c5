"""Tests for kare.metrics."""

import json

import numpy as np
import pytest

from kare.corpus import RelationLabel
from kare.errors import MetricsError
from kare.metrics import (
    ErrorRow,
    Metrics,
    confusion,
    format_errors,
    harmonic_f1,
    prf,
    report,
)

R, E, A, U = (
    RelationLabel.REASON,
    RelationLabel.EFFECT,
    RelationLabel.ADDICTION,
    RelationLabel.AMBIGUOUS,
)


class TestConfusion:
    def test_rows_are_gold(self):
        m = confusion([R, E, E, U], [R, R, E, U])
        assert m[0].tolist() == [1, 1, 0, 0]
        assert m[1].tolist() == [0, 1, 0, 0]
        assert int(m.sum()) == 4

    def test_accepts_indices(self):
        assert confusion([0, 3], [0, 3]).trace() == 2

    def test_empty_and_mismatch(self):
        assert confusion([], []).sum() == 0
        with pytest.raises(MetricsError):
            confusion([R], [])


class TestHarmonicF1:
    def test_reported_aggregates(self):
        assert harmonic_f1(66.41, 67.10) == pytest.approx(66.75, abs=0.01)
        assert harmonic_f1(64.49, 63.22) == pytest.approx(63.85, abs=0.01)

    def test_zero(self):
        assert harmonic_f1(0.0, 0.0) == 0.0


class TestPrf:
    def _matrix(self):
        return confusion([R, R, E, E, A, U, R, U], [R, R, R, E, A, U, U, U])

    def test_micro_is_accuracy(self):
        m = prf(self._matrix(), "micro")
        assert m.precision == m.recall == pytest.approx(m.f1)
        assert m.f1 == pytest.approx(100 * 6 / 8)

    def test_per_class_and_macro(self):
        m = prf(self._matrix(), "macro")
        reason = m.per_class["Reason"]
        assert reason.precision == pytest.approx(200 / 3)
        assert reason.recall == pytest.approx(200 / 3)
        assert reason.support == 3
        assert m.precision == pytest.approx(
            np.mean([200 / 3, 50.0, 100.0, 100.0])
        )
        assert m.f1 == pytest.approx(harmonic_f1(m.precision, m.recall))

    def test_weighted_uses_support(self):
        m = prf(self._matrix(), "weighted")
        expected_recall = (3 * 200 / 3 + 1 * 100 + 1 * 100 + 3 * 200 / 3) / 8
        assert m.recall == pytest.approx(expected_recall)

    def test_undefined_scores_are_zero(self):
        m = prf(confusion([R, R], [R, E]), "macro")
        assert m.per_class["Addiction"].precision == 0.0
        assert m.per_class["Effect"].precision == 0.0
        assert m.per_class["Effect"].recall == 0.0

    def test_micro_scores_coincide_on_random_matrices(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            m = prf(rng.integers(0, 6, size=(4, 4)) + np.eye(4, dtype=int), "micro")
            assert m.precision == pytest.approx(m.recall)
            assert m.f1 == pytest.approx(m.precision)

    def test_weighted_equals_macro_with_equal_supports(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            matrix = np.stack([rng.multinomial(10, [0.25] * 4) for _ in range(4)])
            weighted = prf(matrix, "weighted")
            macro = prf(matrix, "macro")
            assert weighted.precision == pytest.approx(macro.precision)
            assert weighted.recall == pytest.approx(macro.recall)
            assert weighted.f1 == pytest.approx(macro.f1)

    def test_bad_inputs(self):
        with pytest.raises(MetricsError):
            prf(self._matrix(), "sample")
        with pytest.raises(MetricsError):
            prf(np.zeros((4, 4)))


class TestReport:
    def _variants(self):
        full = Metrics(66.41, 67.10, harmonic_f1(66.41, 67.10))
        ablated = Metrics(64.49, 63.22, harmonic_f1(64.49, 63.22))
        return [("full", full), ("-context", ablated)]

    def test_delta_against_reference(self):
        rows = report(self._variants(), "full").rows
        assert rows[0].delta_f1 == 0.0
        assert rows[1].delta_f1 == pytest.approx(-2.90, abs=0.01)
        assert rows[1].delta_precision == pytest.approx(-1.92)

    def test_text_and_json(self):
        rep = report(self._variants(), "full")
        lines = rep.text().splitlines()
        assert lines[0].split()[-3:] == ["ΔP", "ΔR", "ΔF1"]
        assert lines[2].split() == ["full", "66.41", "67.10", "66.75"] + ["+0.00"] * 3
        assert lines[3].split()[-3:] == ["-1.92", "-3.88", "-2.90"]
        data = json.loads(rep.to_json())
        assert data["reference"] == "full"
        assert [v["name"] for v in data["variants"]] == ["full", "-context"]

    def test_missing_reference(self):
        with pytest.raises(MetricsError):
            report(self._variants(), "bert")


class TestFormatErrors:
    def test_groups_by_pair(self):
        rows = [
            ErrorRow("a", R, U, 0.6, "x"),
            ErrorRow("b", E, R, 0.5, "y"),
            ErrorRow("c", E, R, 0.7, "z"),
        ]
        lines = format_errors(rows).splitlines()
        assert lines[0] == "Effect -> Reason (2)"
        assert lines[3] == "Reason -> Ambiguous (1)"
        assert lines[1].split("\t")[:2] == ["  b", "0.500"]
