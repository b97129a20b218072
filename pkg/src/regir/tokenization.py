"""Tokenization and vocabularies.

Two token granularities: character-level (each CJK code point is one token,
runs of ASCII letters/digits group into one token) and word-level via greedy
forward maximum matching against a user dictionary.  Vocabularies reserve
five special ids: PAD=0, UNK=1, CLS=2, SEP=3, MASK=4.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from .corpus import Corpus
from .errors import DataError

SPECIAL_TOKENS = ("[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]")
PAD_ID, UNK_ID, CLS_ID, SEP_ID, MASK_ID = range(5)


def char_tokenize(text: str) -> list[str]:
    """Character tokens: CJK per code point, ASCII alnum runs grouped,
    whitespace dropped, anything else one token per character."""
    tokens: list[str] = []
    run: list[str] = []

    def flush():
        if run:
            tokens.append("".join(run))
            run.clear()

    for ch in text:
        if ch.isascii() and ch.isalnum():
            run.append(ch)
            continue
        flush()
        if ch.isspace():
            continue
        tokens.append(ch)
    flush()
    return tokens


@dataclass(frozen=True)
class SegmenterDict:
    entries: frozenset[str]

    def __post_init__(self):
        if any(len(e) < 1 for e in self.entries):
            raise DataError("segmenter dictionary entries must be nonempty")

    @classmethod
    def from_words(cls, words) -> "SegmenterDict":
        return cls(frozenset(words))

    @classmethod
    def load(cls, path) -> "SegmenterDict":
        with open(path, encoding="utf-8") as fh:
            words = [line.rstrip("\n") for line in fh]
        return cls(frozenset(w for w in words if w))


def max_match_segment(text: str, seg_dict: SegmenterDict) -> list[str]:
    """Greedy forward longest-prefix segmentation; unmatched characters pass
    through as single-character words, so outputs concatenate to the input."""
    if not text:
        return []
    max_len = max((len(e) for e in seg_dict.entries), default=1)
    words: list[str] = []
    i = 0
    n = len(text)
    while i < n:
        match = text[i]
        for length in range(min(max_len, n - i), 1, -1):
            candidate = text[i:i + length]
            if candidate in seg_dict.entries:
                match = candidate
                break
        words.append(match)
        i += len(match)
    return words


@dataclass
class Vocabulary:
    """Dense token<->id maps with the five reserved specials at ids 0-4."""

    id_to_token: list[str]
    token_to_id: dict[str, int]
    counts: list[int]
    min_count: int = 1

    def __len__(self) -> int:
        return len(self.id_to_token)

    def encode(self, tokens) -> list[int]:
        return [self.token_to_id.get(t, UNK_ID) for t in tokens]

    def decode(self, ids) -> list[str]:
        out = []
        for i in ids:
            if not 0 <= i < len(self.id_to_token):
                raise DataError(f"id {i} out of range for vocabulary of size {len(self)}")
            out.append(self.id_to_token[i])
        return out

    def serialize(self) -> bytes:
        return ("\n".join(self.id_to_token) + "\n").encode("utf-8")

    def fingerprint(self) -> str:
        return hashlib.sha256(self.serialize()).hexdigest()

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.serialize())

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            tokens = fh.read().split("\n")
        if tokens and tokens[-1] == "":
            tokens.pop()
        if tuple(tokens[:5]) != SPECIAL_TOKENS:
            raise DataError(f"{path}: vocabulary file must start with {SPECIAL_TOKENS}")
        mapping = {t: i for i, t in enumerate(tokens)}
        if len(mapping) != len(tokens):
            raise DataError(f"{path}: duplicate token in vocabulary file")
        return cls(id_to_token=tokens, token_to_id=mapping, counts=[0] * len(tokens))


def tokenize_line(line: str, mode: str, seg_dict: SegmenterDict | None = None) -> list[str]:
    if mode == "char":
        return char_tokenize(line)
    if mode == "word":
        if seg_dict is None:
            raise DataError("word mode requires a segmenter dictionary")
        return [w for w in max_match_segment(line, seg_dict) if not w.isspace()]
    raise DataError(f"unknown tokenization mode {mode!r}")


def build_vocab(
    corpus: Corpus,
    mode: str = "char",
    min_count: int = 1,
    seg_dict: SegmenterDict | None = None,
) -> Vocabulary:
    """Frequency-ordered vocabulary (ties broken lexicographically) over the
    tokenized corpus; tokens rarer than `min_count` fall back to UNK."""
    if len(corpus) == 0:
        raise DataError("cannot build a vocabulary from an empty corpus")
    freq: dict[str, int] = {}
    for line in corpus.lines:
        for token in tokenize_line(line, mode, seg_dict):
            freq[token] = freq.get(token, 0) + 1
    for special in SPECIAL_TOKENS:
        freq.pop(special, None)
    ranked = sorted(
        (t for t, c in freq.items() if c >= min_count),
        key=lambda t: (-freq[t], t),
    )
    id_to_token = list(SPECIAL_TOKENS) + ranked
    token_to_id = {t: i for i, t in enumerate(id_to_token)}
    counts = [0] * 5 + [freq[t] for t in ranked]
    return Vocabulary(id_to_token, token_to_id, counts, min_count=min_count)


def encode(tokens, vocab: Vocabulary) -> list[int]:
    return vocab.encode(tokens)


def decode(ids, vocab: Vocabulary) -> list[str]:
    return vocab.decode(ids)
