"""Metric equations against an independent brute-force recount oracle."""

from __future__ import annotations

import itertools

import pytest

from regir.errors import DataError
from regir.labels import NER_LABELS, NER_TAGS, TC_CATEGORIES
from regir.metrics import (
    LabelMetrics,
    evaluate,
    evaluate_ner,
    evaluate_tc,
    extract_spans,
    prf,
    weighted_f1,
    write_report,
)


def recount_tc(pred, gold):
    """Oracle: recount every category from scratch and redo the equations."""
    rows = {}
    for cat in TC_CATEGORIES:
        n_correct = sum(1 for p, g in zip(pred, gold) if p == g == cat)
        n_labeled = sum(1 for p in pred if p == cat)
        n_true = sum(1 for g in gold if g == cat)
        p = n_correct / n_labeled if n_labeled else 0.0
        r = n_correct / n_true if n_true else 0.0
        f1 = 2 * p * r / (p + r) if p + r else 0.0
        rows[cat] = (n_correct, n_labeled, n_true, p, r, f1)
    total = sum(r[2] for r in rows.values())
    wf1 = sum(r[2] * r[5] for r in rows.values()) / total
    return rows, wf1


def oracle_spans(tags):
    """Span extraction written independently: scan for run starts/ends."""
    spans = set()
    i = 0
    while i < len(tags):
        if tags[i] == "O":
            i += 1
            continue
        label = tags[i].split("-", 1)[1]
        j = i + 1
        while j < len(tags) and tags[j] == f"I-{label}":
            j += 1
        spans.add((label, i, j))
        i = j
    return spans


def recount_ner(pred, gold):
    rows = {}
    pred_spans = [oracle_spans(p) for p in pred]
    gold_spans = [oracle_spans(g) for g in gold]
    for lab in NER_LABELS:
        n_correct = sum(
            len({s for s in ps if s[0] == lab} & {s for s in gs if s[0] == lab})
            for ps, gs in zip(pred_spans, gold_spans)
        )
        n_labeled = sum(sum(1 for s in ps if s[0] == lab) for ps in pred_spans)
        n_true = sum(sum(1 for s in gs if s[0] == lab) for gs in gold_spans)
        p = n_correct / n_labeled if n_labeled else 0.0
        r = n_correct / n_true if n_true else 0.0
        f1 = 2 * p * r / (p + r) if p + r else 0.0
        rows[lab] = (n_correct, n_labeled, n_true, p, r, f1)
    total = sum(r[2] for r in rows.values())
    wf1 = sum(r[2] * r[5] for r in rows.values()) / total if total else 0.0
    return rows, wf1


class TestPrf:
    def test_worked_example(self):
        assert prf(3, 4, 6) == (0.75, 0.5, 0.6)

    def test_zero_denominators(self):
        assert prf(0, 0, 5) == (0.0, 0.0, 0.0)
        assert prf(0, 5, 0) == (0.0, 0.0, 0.0)

    def test_perfect(self):
        for n in (1, 3, 100):
            assert prf(n, n, n) == (1.0, 1.0, 1.0)

    def test_count_bound_enforced(self):
        with pytest.raises(DataError, match="exceeds"):
            prf(5, 4, 6)


def _lm(label, n_i, f1):
    return LabelMetrics(label, 0, 0, n_i, 0.0, 0.0, f1)


class TestWeightedF1:
    def test_worked_example(self):
        assert weighted_f1([_lm("a", 1, 1.0), _lm("b", 3, 0.5)]) == 0.625

    def test_constant_case(self):
        labels = [_lm(c, i + 1, 0.7) for i, c in enumerate("abcd")]
        assert weighted_f1(labels) == pytest.approx(0.7)

    def test_order_invariance(self, rng):
        labels = [_lm(str(i), int(rng.integers(0, 9)), float(rng.random())) for i in range(7)]
        if sum(m.n_i for m in labels) == 0:
            labels[0] = _lm("0", 3, 0.5)
        base = weighted_f1(labels)
        assert weighted_f1(list(reversed(labels))) == pytest.approx(base)

    def test_all_zero_weights_rejected(self):
        with pytest.raises(DataError, match="n_i"):
            weighted_f1([_lm("a", 0, 1.0)])

    def test_bounded_by_label_f1s(self, rng):
        for _ in range(200):
            labels = [_lm(str(i), int(rng.integers(0, 5)), float(rng.random()))
                      for i in range(5)]
            weighted = [m for m in labels if m.n_i > 0]
            if not weighted:
                continue
            w = weighted_f1(labels)
            assert min(m.f1 for m in weighted) - 1e-12 <= w <= max(m.f1 for m in weighted) + 1e-12


class TestExtractSpans:
    def test_all_outside(self):
        assert extract_spans(["O", "O", "O"]) == set()

    def test_simple_spans(self):
        tags = ["B-obj", "I-obj", "O", "B-prop"]
        assert extract_spans(tags) == {("obj", 0, 2), ("prop", 3, 4)}

    def test_stray_i_repaired(self):
        assert extract_spans(["I-obj", "I-obj"]) == {("obj", 0, 2)}

    def test_label_switch_splits(self):
        tags = ["B-obj", "I-prop"]
        assert extract_spans(tags) == {("obj", 0, 1), ("prop", 1, 2)}

    def test_b_after_b_splits(self):
        tags = ["B-obj", "B-obj"]
        assert extract_spans(tags) == {("obj", 0, 1), ("obj", 1, 2)}

    def test_invalid_tag(self):
        with pytest.raises(DataError, match="invalid tag"):
            extract_spans(["B-nope"])


class TestEvaluateTc:
    def test_identity_predictions(self):
        gold = ["direct", "method", "term", "others"]
        report = evaluate_tc(gold, gold)
        assert report.weighted_f1 == 1.0
        for m in report.per_label:
            if m.n_true:
                assert (m.precision, m.recall, m.f1) == (1.0, 1.0, 1.0)

    def test_worked_two_class_example(self):
        gold = ["direct", "direct", "indirect"]
        pred = ["direct", "indirect", "indirect"]
        report = evaluate_tc(pred, gold)
        by_label = {m.label: m for m in report.per_label}
        assert by_label["direct"].precision == 1.0
        assert by_label["direct"].recall == 0.5
        assert by_label["direct"].f1 == pytest.approx(2 / 3)
        assert by_label["indirect"].f1 == pytest.approx(2 / 3)
        assert report.weighted_f1 == pytest.approx(2 / 3)

    def test_micro_consistency(self, rng):
        gold = list(rng.choice(TC_CATEGORIES, size=60))
        pred = list(rng.choice(TC_CATEGORIES, size=60))
        report = evaluate_tc(pred, gold)
        n_i, n_labeled, _ = report.totals
        assert n_i == 60 and n_labeled == 60

    def test_recount_oracle_500(self, rng):
        for _ in range(500):
            n = int(rng.integers(1, 30))
            gold = list(rng.choice(TC_CATEGORIES, size=n))
            pred = list(rng.choice(TC_CATEGORIES, size=n))
            report = evaluate_tc(pred, gold)
            rows, wf1 = recount_tc(pred, gold)
            for m in report.per_label:
                oc, ol, ot, op, orr, of1 = rows[m.label]
                assert (m.n_correct, m.n_labeled, m.n_true) == (oc, ol, ot)
                assert round(m.f1, 4) == round(of1, 4)
            assert round(report.weighted_f1, 4) == round(wf1, 4)

    def test_misaligned_rejected(self):
        with pytest.raises(DataError, match="mismatch"):
            evaluate_tc(["direct"], ["direct", "term"])

    def test_monotonicity_fix_one_wrong(self):
        # flipping a wrong prediction to correct never lowers weighted F1
        cats = TC_CATEGORIES[:3]
        for gold in itertools.product(cats, repeat=4):
            for pred in itertools.product(cats, repeat=4):
                wrong = [i for i, (p, g) in enumerate(zip(pred, gold)) if p != g]
                if not wrong:
                    continue
                base = evaluate_tc(list(pred), list(gold)).weighted_f1
                fixed = list(pred)
                fixed[wrong[0]] = gold[wrong[0]]
                improved = evaluate_tc(fixed, list(gold)).weighted_f1
                assert improved >= base - 1e-12


def _random_tags(rng, n):
    return [str(rng.choice(NER_TAGS)) for _ in range(n)]


class TestEvaluateNer:
    def test_identity(self, rng):
        gold = [_random_tags(rng, int(rng.integers(1, 12))) for _ in range(20)]
        if not any(t != "O" for tags in gold for t in tags):
            gold[0][0] = "B-obj"
        report = evaluate_ner(gold, gold)
        assert report.weighted_f1 == 1.0

    def test_span_must_match_exactly(self):
        gold = [["B-obj", "I-obj", "O"]]
        pred = [["B-obj", "O", "O"]]  # boundary differs -> no credit
        report = evaluate_ner(pred, gold)
        by_label = {m.label: m for m in report.per_label}
        assert by_label["obj"].n_correct == 0
        assert by_label["obj"].n_labeled == 1
        assert by_label["obj"].n_true == 1

    def test_correct_bounded(self, rng):
        for _ in range(50):
            n = int(rng.integers(1, 10))
            pred = [_random_tags(rng, n)]
            gold = [_random_tags(rng, n)]
            if not any(t != "O" for t in gold[0]):
                gold[0][0] = "B-cmp"
            report = evaluate_ner(pred, gold)
            for m in report.per_label:
                assert m.n_correct <= min(m.n_labeled, m.n_true)

    def test_recount_oracle_500(self, rng):
        for _ in range(500):
            k = int(rng.integers(1, 6))
            lens = [int(rng.integers(1, 10)) for _ in range(k)]
            gold = [_random_tags(rng, n) for n in lens]
            pred = [_random_tags(rng, n) for n in lens]
            if not any(t != "O" for tags in gold for t in tags):
                gold[0][0] = "B-Robj"
            report = evaluate_ner(pred, gold)
            rows, wf1 = recount_ner(pred, gold)
            for m in report.per_label:
                assert (m.n_correct, m.n_labeled, m.n_true) == rows[m.label][:3]
            assert round(report.weighted_f1, 4) == round(wf1, 4)

    def test_token_mode(self):
        gold = [["B-obj", "I-obj"]]
        pred = [["B-obj", "O"]]
        report = evaluate_ner(pred, gold, mode="token")
        by_label = {m.label: m for m in report.per_label}
        assert by_label["obj"].n_correct == 1
        assert by_label["obj"].n_labeled == 1
        assert by_label["obj"].n_true == 2

    def test_length_mismatch_rejected(self):
        with pytest.raises(DataError, match="length"):
            evaluate_ner([["O"]], [["O", "O"]])


class TestReportFile:
    def test_tsv_layout(self, tmp_path):
        gold = ["direct", "method", "method"]
        report = evaluate("direct method method".split(), gold, "tc")
        p = tmp_path / "report.tsv"
        write_report(report, p)
        lines = p.read_text(encoding="utf-8").splitlines()
        assert lines[0].startswith("#")
        assert lines[1].split("\t")[0] == "label"
        assert lines[-1].startswith("WEIGHTED")
        assert "1.0000" in lines[-1]
        assert len(lines) == 2 + len(TC_CATEGORIES) + 1
