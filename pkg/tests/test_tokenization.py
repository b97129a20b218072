"""Tokenizers, segmentation, vocabulary construction and round-trips."""

from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from regir.corpus import Corpus
from regir.errors import DataError
from regir.tokenization import (
    MASK_ID,
    PAD_ID,
    SPECIAL_TOKENS,
    UNK_ID,
    SegmenterDict,
    Vocabulary,
    build_vocab,
    char_tokenize,
    decode,
    encode,
    max_match_segment,
)


class TestCharTokenize:
    def test_cjk_per_code_point(self):
        assert char_tokenize("土木") == ["土", "木"]

    def test_ascii_runs_group(self):
        assert char_tokenize("C30混凝土") == ["C30", "混", "凝", "土"]

    def test_empty(self):
        assert char_tokenize("") == []

    def test_whitespace_dropped(self):
        assert char_tokenize("a b\tc") == ["a", "b", "c"]

    def test_punctuation_single(self):
        assert char_tokenize("a,b。") == ["a", ",", "b", "。"]

    @given(st.text(max_size=60))
    @settings(max_examples=300, deadline=None)
    def test_reconstruction(self, text):
        tokens = char_tokenize(text)
        assert "".join(tokens) == "".join(ch for ch in text if not ch.isspace())


class TestMaxMatch:
    def test_greedy_longest_prefix(self):
        d = SegmenterDict.from_words({"AB", "ABC", "C"})
        assert max_match_segment("ABCC", d) == ["ABC", "C"]

    def test_empty_dict_fallback(self):
        assert max_match_segment("X", SegmenterDict.from_words(set())) == ["X"]

    def test_empty_text(self):
        assert max_match_segment("", SegmenterDict.from_words({"ab"})) == []

    @given(
        st.text(alphabet="abc土木", max_size=200),
        st.sets(st.text(alphabet="abc土木", min_size=1, max_size=4), max_size=12),
    )
    @settings(max_examples=300, deadline=None)
    def test_reconstruction(self, text, words):
        out = max_match_segment(text, SegmenterDict.from_words(words))
        assert "".join(out) == text


class TestVocabulary:
    def test_single_token_corpus(self):
        # "a a a" has one distinct char token, so V = 5 specials + 1
        v = build_vocab(Corpus("general", ["a a a"]), mode="char", min_count=1)
        assert len(v) == 6
        assert v.id_to_token[5] == "a"
        assert v.counts[5] == 3

    def test_ascii_runs_are_single_vocab_entries(self):
        v = build_vocab(Corpus("general", ["aa a"]), mode="char", min_count=1)
        assert set(v.id_to_token[5:]) == {"aa", "a"}

    def test_threshold_leaves_specials_only(self):
        v = build_vocab(Corpus("general", ["a b c"]), mode="char", min_count=10)
        assert len(v) == 5
        assert v.id_to_token == list(SPECIAL_TOKENS)

    def test_frequency_then_lexicographic_order(self):
        v = build_vocab(Corpus("general", ["b b a a c"]), mode="char")
        assert v.id_to_token[5:] == ["a", "b", "c"]

    def test_deterministic_rebuild(self):
        c = Corpus("general", ["设计 规范 抗震", "规范 设计"])
        a = build_vocab(c, mode="char")
        b = build_vocab(c, mode="char")
        assert a.id_to_token == b.id_to_token and a.counts == b.counts

    def test_word_mode_requires_dict(self):
        with pytest.raises(DataError, match="dictionary"):
            build_vocab(Corpus("general", ["abc"]), mode="word")

    def test_word_mode(self):
        d = SegmenterDict.from_words({"混凝土"})
        v = build_vocab(Corpus("general", ["混凝土强度"]), mode="word", seg_dict=d)
        assert "混凝土" in v.token_to_id
        assert "强" in v.token_to_id

    def test_empty_corpus_rejected(self):
        with pytest.raises(DataError, match="empty"):
            build_vocab(Corpus("general", []), mode="char")

    def test_specials_occupy_first_five_ids(self):
        v = build_vocab(Corpus("general", ["xy"]), mode="char")
        assert v.id_to_token[:5] == list(SPECIAL_TOKENS)
        assert PAD_ID == 0 and UNK_ID == 1 and MASK_ID == 4


class TestEncodeDecode:
    def test_round_trip_in_vocab(self):
        v = build_vocab(Corpus("general", ["土木工程"]), mode="char")
        tokens = ["木", "土", "工"]
        assert decode(encode(tokens, v), v) == tokens

    def test_unknown_maps_to_unk(self):
        v = build_vocab(Corpus("general", ["ab"]), mode="char")
        assert encode(["zz"], v) == [UNK_ID]

    def test_decode_out_of_range(self):
        v = build_vocab(Corpus("general", ["ab"]), mode="char")
        with pytest.raises(DataError, match="out of range"):
            decode([len(v)], v)

    @given(st.data())
    @settings(max_examples=200, deadline=None)
    def test_round_trip_property(self, data):
        v = build_vocab(Corpus("general", ["土木工程设计规范 abc"]), mode="char")
        in_vocab = v.id_to_token[5:]
        tokens = data.draw(st.lists(st.sampled_from(in_vocab), max_size=64))
        assert decode(encode(tokens, v), v) == tokens

    def test_ids_dense_and_consistent(self):
        v = build_vocab(Corpus("general", ["规范 设计 规范"]), mode="char")
        assert sorted(v.token_to_id.values()) == list(range(len(v)))
        for token, i in v.token_to_id.items():
            assert v.id_to_token[i] == token


class TestVocabFile:
    def test_save_load_preserves_ids(self, tmp_path):
        v = build_vocab(Corpus("general", ["土木 工程 ab"]), mode="char")
        p = tmp_path / "vocab.txt"
        v.save(p)
        loaded = Vocabulary.load(p)
        assert loaded.id_to_token == v.id_to_token
        assert loaded.fingerprint() == v.fingerprint()
        lines = p.read_text(encoding="utf-8").split("\n")
        assert lines[0] == "[PAD]" and lines[4] == "[MASK]"

    def test_load_rejects_missing_specials(self, tmp_path):
        p = tmp_path / "vocab.txt"
        p.write_text("a\nb\n", encoding="utf-8")
        with pytest.raises(DataError, match="must start with"):
            Vocabulary.load(p)

    def test_fingerprint_tracks_content(self, tmp_path):
        a = build_vocab(Corpus("general", ["土木"]), mode="char")
        b = build_vocab(Corpus("general", ["土水"]), mode="char")
        assert a.fingerprint() != b.fingerprint()
