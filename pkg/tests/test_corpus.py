"""Corpus ingestion, cleaning, statistics, split determinism."""

from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from regir.corpus import (
    CleaningRules,
    Corpus,
    CorpusStats,
    NerDataset,
    NerExample,
    SplitSpec,
    TcDataset,
    TcExample,
    clean_corpus,
    corpus_stats,
    ingest_corpus,
    read_ner_dataset,
    read_tc_dataset,
    split_dataset,
    train_size,
    write_ner_dataset,
    write_tc_dataset,
)
from regir.errors import DataError

line_text = st.text(
    alphabet=st.characters(blacklist_characters="\n\r", blacklist_categories=("Cs",)),
    max_size=30,
)


class TestIngest:
    def test_three_line_file(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("one\ntwo\nthree\n", encoding="utf-8")
        c = ingest_corpus(p, "general")
        assert c.lines == ["one", "two", "three"]
        assert c.source_tag == "general"

    def test_empty_file(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("", encoding="utf-8")
        assert ingest_corpus(p, "in_domain").lines == []

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="cannot read"):
            ingest_corpus(tmp_path / "nope.txt", "general")

    def test_invalid_utf8_reports_byte_offset(self, tmp_path):
        p = tmp_path / "bad.txt"
        p.write_bytes(b"ok\n\xff\xfe")
        with pytest.raises(DataError, match="byte offset 3"):
            ingest_corpus(p, "general")

    def test_unknown_tag_rejected(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("x\n", encoding="utf-8")
        with pytest.raises(DataError, match="source tag"):
            ingest_corpus(p, "mystery")


class TestClean:
    def test_strip_dedupe_min_chars(self):
        c = Corpus("general", ["", "  abc  ", "abc"])
        out = clean_corpus(c, CleaningRules(min_chars=2))
        assert out.lines == ["abc"]

    def test_keep_keywords(self):
        c = Corpus("general", ["steel beam span", "column load", "beam depth"])
        out = clean_corpus(c, CleaningRules(keep_keywords=("beam",)))
        assert out.lines == ["steel beam span", "beam depth"]

    def test_drop_patterns(self):
        c = Corpus("general", ["keep this", "drop [ad] this"])
        out = clean_corpus(c, CleaningRules(drop_patterns=("[ad]",)))
        assert out.lines == ["keep this"]

    def test_idempotent_on_random_fixture(self, rng):
        lines = []
        for _ in range(1000):
            n = rng.integers(0, 8)
            lines.append(" " * rng.integers(0, 3) + "".join(
                rng.choice(list("ab土木 ")) for _ in range(n)))
        c = Corpus("general", lines)
        rules = CleaningRules(min_chars=2)
        once = clean_corpus(c, rules)
        twice = clean_corpus(once, rules)
        assert once.lines == twice.lines

    @given(st.lists(line_text, max_size=40))
    @settings(max_examples=200, deadline=None)
    def test_idempotence_property(self, lines):
        rules = CleaningRules(min_chars=2, keep_keywords=None)
        c = Corpus("general", lines)
        once = clean_corpus(c, rules)
        assert clean_corpus(once, rules).lines == once.lines

    @given(st.lists(line_text, max_size=40))
    @settings(max_examples=100, deadline=None)
    def test_no_empty_or_adjacent_duplicate_lines(self, lines):
        out = clean_corpus(Corpus("general", lines), CleaningRules())
        assert all(line.strip() for line in out.lines)
        assert all(a != b for a, b in zip(out.lines, out.lines[1:]))


class TestStats:
    def test_two_cjk_chars(self):
        s = corpus_stats(Corpus("in_domain", ["土木"]))
        assert s == CorpusStats(line_count=1, total_chars=2, cjk_chars=2, distinct_tokens=2)

    def test_mixed_line(self):
        s = corpus_stats(Corpus("in_domain", ["C30混凝土"]))
        assert s.total_chars == 6
        assert s.cjk_chars == 3

    def test_cjk_never_exceeds_total(self, rng):
        lines = ["".join(rng.choice(list("ab12土木工程, ")) for _ in range(20))
                 for _ in range(50)]
        s = corpus_stats(Corpus("general", lines))
        assert s.cjk_chars <= s.total_chars

    @given(st.lists(line_text, max_size=20), st.lists(line_text, max_size=20))
    @settings(max_examples=150, deadline=None)
    def test_count_additivity(self, a, b):
        sa = corpus_stats(Corpus("general", a))
        sb = corpus_stats(Corpus("general", b))
        both = corpus_stats(Corpus("general", a + b))
        assert both.line_count == sa.line_count + sb.line_count
        assert both.total_chars == sa.total_chars + sb.total_chars
        assert both.cjk_chars == sa.cjk_chars + sb.cjk_chars


def _tc_dataset(n):
    cats = ["direct", "indirect", "method", "reference", "general", "term", "others"]
    return TcDataset([TcExample(cats[i % 7], f"text {i}") for i in range(n)])


class TestSplit:
    def test_sizes_round_half_up(self):
        train, val = split_dataset(_tc_dataset(10), SplitSpec(0.8, seed=1))
        assert (len(train), len(val)) == (8, 2)

    def test_sizes_for_611(self):
        assert train_size(611, 0.8) == 489
        train, val = split_dataset(_tc_dataset(611), SplitSpec(0.8, seed=3))
        assert (len(train), len(val)) == (489, 122)

    def test_same_seed_same_split_different_seed_differs(self):
        d = _tc_dataset(40)
        t1, v1 = split_dataset(d, SplitSpec(0.8, seed=7))
        t2, v2 = split_dataset(d, SplitSpec(0.8, seed=7))
        t3, v3 = split_dataset(d, SplitSpec(0.8, seed=8))
        assert t1.examples == t2.examples and v1.examples == v2.examples
        assert t1.examples != t3.examples
        assert (len(t3), len(v3)) == (32, 8)

    def test_partition_covers_everything(self):
        d = _tc_dataset(23)
        train, val = split_dataset(d, SplitSpec(0.8, seed=5))
        combined = sorted(e.text for e in train.examples + val.examples)
        assert combined == sorted(e.text for e in d.examples)

    def test_empty_dataset_rejected(self):
        with pytest.raises(DataError, match="empty"):
            split_dataset(TcDataset([]), SplitSpec(0.8, seed=0))

    def test_bad_ratio_rejected(self):
        with pytest.raises(DataError, match="train_ratio"):
            SplitSpec(1.0, seed=0)


class TestDatasetFiles:
    def test_tc_round_trip(self, tmp_path):
        d = _tc_dataset(9)
        p = tmp_path / "tc.tsv"
        write_tc_dataset(d, p)
        assert read_tc_dataset(p).examples == d.examples

    def test_tc_unknown_label(self, tmp_path):
        p = tmp_path / "tc.tsv"
        p.write_text("bogus\tsome text\n", encoding="utf-8")
        with pytest.raises(DataError, match="tc.tsv:1.*bogus"):
            read_tc_dataset(p)

    def test_ner_round_trip(self, tmp_path):
        d = NerDataset([
            NerExample(("梁", "的", "高", "度"), ("B-obj", "O", "B-prop", "I-prop")),
            NerExample(("钢",), ("B-sobj",)),
        ])
        p = tmp_path / "ner.conll"
        write_ner_dataset(d, p)
        assert read_ner_dataset(p).examples == d.examples

    def test_ner_bad_tag(self, tmp_path):
        p = tmp_path / "ner.conll"
        p.write_text("梁\tB-thing\n", encoding="utf-8")
        with pytest.raises(DataError, match="unknown tag"):
            read_ner_dataset(p)

    def test_ner_no_trailing_blank(self, tmp_path):
        p = tmp_path / "ner.conll"
        p.write_text("梁\tB-obj\n高\tO", encoding="utf-8")
        d = read_ner_dataset(p)
        assert d.examples == [NerExample(("梁", "高"), ("B-obj", "O"))]
