"""Synthetic fixtures: constructed corpora and labeled datasets with known
structure, used by the experiment scripts and the acceptance checks.

Tokens are ASCII words ("g03", "d12", ...) separated by spaces, so the
character tokenizer's run-grouping rule keeps each word whole.
"""

from __future__ import annotations

import numpy as np

from .corpus import Corpus, NerDataset, NerExample, TcDataset, TcExample
from .labels import TC_CATEGORIES
from .seeding import substream


def two_cluster_corpus(
    n_lines: int = 2000,
    words_per_cluster: int = 10,
    line_len: int = 6,
    seed: int = 0,
) -> tuple[Corpus, list[str], list[str]]:
    """Lines whose words co-occur only within their own topic cluster."""
    cluster_a = [f"a{i:02d}" for i in range(words_per_cluster)]
    cluster_b = [f"b{i:02d}" for i in range(words_per_cluster)]
    rng = substream(seed, "two-cluster")
    lines = []
    for i in range(n_lines):
        pool = cluster_a if i % 2 == 0 else cluster_b
        lines.append(" ".join(rng.choice(pool) for _ in range(line_len)))
    return Corpus("general", lines, provenance="synthetic two-cluster"), cluster_a, cluster_b


def _couple_lines(tokens: list[str], n_lines: int, couples_per_line: int,
                  rng: np.random.Generator) -> list[str]:
    """Lines made of fixed bigram couples (token 2i always followed by 2i+1)."""
    n_couples = len(tokens) // 2
    lines = []
    for _ in range(n_lines):
        picks = rng.integers(0, n_couples, size=couples_per_line)
        words = []
        for c in picks:
            words += [tokens[2 * c], tokens[2 * c + 1]]
        lines.append(" ".join(words))
    return lines


def domain_shift_corpora(seed: int = 0, n_general: int = 400, n_domain: int = 400,
                         n_heldout: int = 100):
    """A "general" and a "domain" corpus with disjoint collocation statistics.

    Both corpora are built from bigram couples; the general corpus uses g-
    tokens, the domain corpus d-tokens, so nothing learned on one transfers
    trivially to the other.  Returns (general, domain, heldout_domain,
    general_tokens, domain_tokens)."""
    g_tokens = [f"g{i:02d}" for i in range(20)]
    d_tokens = [f"d{i:02d}" for i in range(20)]
    general = Corpus(
        "general",
        _couple_lines(g_tokens, n_general, 3, substream(seed, "general")),
        provenance="synthetic general",
    )
    domain = Corpus(
        "in_domain",
        _couple_lines(d_tokens, n_domain, 3, substream(seed, "domain")),
        provenance="synthetic domain",
    )
    heldout = Corpus(
        "in_domain",
        _couple_lines(d_tokens, n_heldout, 3, substream(seed, "heldout")),
        provenance="synthetic domain held-out",
    )
    return general, domain, heldout, g_tokens, d_tokens


def domain_tc_dataset(n_per_class: int, seed: int = 0) -> TcDataset:
    """Domain-styled classification data: category k is marked by the domain
    couple (d_{2k}, d_{2k+1}); the remaining couples appear as filler."""
    d_tokens = [f"d{i:02d}" for i in range(20)]
    rng = substream(seed, "domain-tc")
    examples = []
    for k, label in enumerate(TC_CATEGORIES):
        for _ in range(n_per_class):
            words = [d_tokens[2 * k], d_tokens[2 * k + 1]]
            for c in rng.integers(7, 10, size=2):
                words += [d_tokens[2 * c], d_tokens[2 * c + 1]]
            order = rng.permutation(3)
            pairs = [words[0:2], words[2:4], words[4:6]]
            flat = [w for i in order for w in pairs[i]]
            examples.append(TcExample(label, " ".join(flat)))
    return TcDataset(examples)


def separable_tc_dataset(n_examples: int = 32, seed: int = 0) -> TcDataset:
    """Trivially separable data: one signature character per category."""
    signatures = ["梁", "柱", "板", "墙", "钢", "筋", "土"]
    filler = ["抗", "震", "设", "计", "规", "范"]
    rng = substream(seed, "separable-tc")
    examples = []
    for i in range(n_examples):
        k = i % len(TC_CATEGORIES)
        body = "".join(rng.choice(filler) for _ in range(4))
        examples.append(TcExample(TC_CATEGORIES[k], signatures[k] + body))
    return TcDataset(examples)


def toy_ner_dataset(n_sentences: int = 16, seed: int = 0) -> NerDataset:
    """Small tagging task: object word, property pair, trailing plain text."""
    objects = ["梁", "柱", "板", "墙"]
    props = [("高", "度"), ("宽", "度"), ("强", "度"), ("刚", "度")]
    tail = ["不", "应", "大", "于"]
    rng = substream(seed, "toy-ner")
    examples = []
    for i in range(n_sentences):
        obj = objects[i % 4]
        prop = props[int(rng.integers(0, 4))]
        n_tail = 2 + int(rng.integers(0, 3))
        tokens = (obj,) + prop + tuple(tail[:n_tail])
        tags = ("B-obj", "B-prop", "I-prop") + ("O",) * n_tail
        examples.append(NerExample(tokens, tags))
    return NerDataset(examples)
