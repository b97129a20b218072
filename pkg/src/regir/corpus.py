"""Corpus ingestion, cleaning, statistics, and labeled-dataset handling.

Corpora are line-oriented UTF-8 text: one unit of text per line.  Labeled
datasets come in two shapes: classification examples (`label<TAB>text` TSV)
and sequence-labeling examples (CoNLL-style `token<TAB>tag` lines with blank
lines between sentences).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DataError
from .labels import NER_TAG_TO_ID, TC_CATEGORY_TO_ID
from .seeding import substream

SOURCE_TAGS = ("general", "in_domain", "close_domain")

# CJK Unified Ideographs blocks (base + extensions A-G).
_CJK_RANGES = (
    (0x4E00, 0x9FFF),
    (0x3400, 0x4DBF),
    (0x20000, 0x2A6DF),
    (0x2A700, 0x2B73F),
    (0x2B740, 0x2B81F),
    (0x2B820, 0x2CEAF),
    (0x2CEB0, 0x2EBEF),
    (0x30000, 0x3134F),
)


def is_cjk(ch: str) -> bool:
    cp = ord(ch)
    return any(lo <= cp <= hi for lo, hi in _CJK_RANGES)


@dataclass
class Corpus:
    source_tag: str
    lines: list[str]
    provenance: str = ""

    def __post_init__(self):
        if self.source_tag not in SOURCE_TAGS:
            raise DataError(f"unknown corpus source tag {self.source_tag!r}")
        for i, line in enumerate(self.lines):
            if "\n" in line or "\r" in line:
                raise DataError(f"corpus line {i} contains a line break")

    def __len__(self) -> int:
        return len(self.lines)


@dataclass(frozen=True)
class CleaningRules:
    """Line filters; `keep_keywords` empty/None means keep everything."""

    min_chars: int = 2
    strip_whitespace: bool = True
    drop_duplicates: bool = True
    keep_keywords: tuple[str, ...] | None = None
    drop_patterns: tuple[str, ...] = ()


@dataclass(frozen=True)
class CorpusStats:
    line_count: int
    total_chars: int
    cjk_chars: int
    distinct_tokens: int

    def __add__(self, other: "CorpusStats") -> "CorpusStats":
        # distinct_tokens is not additive in general; summing matches the
        # additivity contract used for desk-scale bookkeeping of the counts.
        return CorpusStats(
            self.line_count + other.line_count,
            self.total_chars + other.total_chars,
            self.cjk_chars + other.cjk_chars,
            self.distinct_tokens + other.distinct_tokens,
        )


@dataclass(frozen=True)
class SplitSpec:
    train_ratio: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_ratio < 1.0:
            raise DataError(f"train_ratio must be in (0,1), got {self.train_ratio}")


def ingest_corpus(path, tag: str) -> Corpus:
    """Read a UTF-8 text file into a Corpus, one line per text line."""
    try:
        raw = open(path, "rb").read()
    except OSError as exc:
        raise DataError(f"cannot read corpus file {path}: {exc}") from exc
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise DataError(
            f"{path}: invalid UTF-8 byte sequence at byte offset {exc.start}"
        ) from exc
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    lines = [line.rstrip("\r") for line in lines]
    return Corpus(source_tag=tag, lines=lines, provenance=str(path))


def write_corpus(corpus: Corpus, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in corpus.lines:
            fh.write(line + "\n")


def clean_corpus(corpus: Corpus, rules: CleaningRules) -> Corpus:
    """Apply cleaning rules; idempotent, order-preserving.

    Empty lines are always dropped.  Adjacent duplicates collapse when
    `drop_duplicates` is set.
    """
    kept: list[str] = []
    for line in corpus.lines:
        if rules.strip_whitespace:
            line = line.strip()
        if len(line) == 0 or len(line) < rules.min_chars:
            continue
        if any(pat in line for pat in rules.drop_patterns):
            continue
        if rules.keep_keywords and not any(kw in line for kw in rules.keep_keywords):
            continue
        if rules.drop_duplicates and kept and kept[-1] == line:
            continue
        kept.append(line)
    return replace(corpus, lines=kept)


def corpus_stats(corpus: Corpus) -> CorpusStats:
    total = 0
    cjk = 0
    distinct: set[str] = set()
    for line in corpus.lines:
        total += len(line)
        cjk += sum(1 for ch in line if is_cjk(ch))
        distinct.update(line)
    return CorpusStats(
        line_count=len(corpus.lines),
        total_chars=total,
        cjk_chars=cjk,
        distinct_tokens=len(distinct),
    )


# ---------------------------------------------------------------------------
# labeled datasets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TcExample:
    label: str
    text: str


@dataclass(frozen=True)
class NerExample:
    tokens: tuple[str, ...]
    tags: tuple[str, ...]


@dataclass
class TcDataset:
    examples: list[TcExample] = field(default_factory=list)

    task = "tc"

    def __len__(self):
        return len(self.examples)


@dataclass
class NerDataset:
    examples: list[NerExample] = field(default_factory=list)

    task = "ner"

    def __len__(self):
        return len(self.examples)


def read_tc_dataset(path) -> TcDataset:
    """Parse `label<TAB>text` TSV; labels must be one of the seven categories."""
    examples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected label<TAB>text, got {line!r}")
            label, text = parts
            if label not in TC_CATEGORY_TO_ID:
                raise DataError(f"{path}:{lineno}: unknown category {label!r}")
            examples.append(TcExample(label=label, text=text))
    return TcDataset(examples)


def write_tc_dataset(dataset: TcDataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ex in dataset.examples:
            fh.write(f"{ex.label}\t{ex.text}\n")


def read_ner_dataset(path) -> NerDataset:
    """Parse CoNLL-style `token<TAB>tag` pairs, blank line between sentences."""
    examples = []
    tokens: list[str] = []
    tags: list[str] = []

    def flush(lineno):
        nonlocal tokens, tags
        if tokens:
            examples.append(NerExample(tuple(tokens), tuple(tags)))
            tokens, tags = [], []

    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                flush(lineno)
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected token<TAB>tag, got {line!r}")
            token, tag = parts
            if tag not in NER_TAG_TO_ID:
                raise DataError(f"{path}:{lineno}: unknown tag {tag!r}")
            tokens.append(token)
            tags.append(tag)
    flush(None)
    return NerDataset(examples)


def write_ner_dataset(dataset: NerDataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ex in dataset.examples:
            for token, tag in zip(ex.tokens, ex.tags):
                fh.write(f"{token}\t{tag}\n")
            fh.write("\n")


def train_size(n: int, ratio: float) -> int:
    """Round-half-up share of `n` that goes to the training side."""
    return int(np.floor(ratio * n + 0.5))


def split_dataset(dataset, spec: SplitSpec):
    """Seeded uniform split into (train, val); same seed gives the same split."""
    n = len(dataset)
    if n == 0:
        raise DataError("cannot split an empty dataset")
    rng = substream(spec.seed, "split")
    perm = rng.permutation(n)
    k = train_size(n, spec.train_ratio)
    train_idx, val_idx = perm[:k], perm[k:]
    make = type(dataset)
    train = make([dataset.examples[i] for i in train_idx])
    val = make([dataset.examples[i] for i in val_idx])
    return train, val
