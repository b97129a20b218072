"""Static word embeddings: skip-gram objective with negative sampling.

Each (center, context) pair drawn from a sliding window contributes
    L = -log sigmoid(u_ctx . v_cen) - sum_n log sigmoid(-u_n . v_cen)
where the n are noise tokens drawn from the unigram^0.75 distribution.
Input vectors (v) are the published embeddings; context vectors (u) exist
only during training.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import Corpus
from .errors import DataError
from .seeding import substream
from .tokenization import SegmenterDict, Vocabulary, tokenize_line

_N_SPECIALS = 5


@dataclass(frozen=True)
class EmbeddingConfig:
    dim: int = 300
    negatives_k: int = 5
    window: int = 5
    epochs: int = 5
    lr: float = 0.025
    min_lr: float = 1e-4
    min_count: int = 1
    unigram_power: float = 0.75
    mode: str = "char"
    chunk_size: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.dim < 1 or self.negatives_k < 1 or self.window < 1:
            raise DataError("dim, negatives_k and window must all be >= 1")


@dataclass
class EmbeddingTable:
    vocab: Vocabulary
    input_vectors: np.ndarray
    context_vectors: np.ndarray

    def __post_init__(self):
        v = len(self.vocab)
        if self.input_vectors.shape != self.context_vectors.shape or \
                self.input_vectors.shape[0] != v:
            raise DataError("embedding arrays must both be V x dim")

    @property
    def dim(self) -> int:
        return self.input_vectors.shape[1]


class NegSampler:
    """Draws token ids with probability proportional to count^power.

    Specials (ids 0-4) always have zero probability.
    """

    def __init__(self, counts, power: float = 0.75, rng: np.random.Generator | None = None):
        counts = np.asarray(counts, dtype=np.float64)
        counts = counts.copy()
        counts[:_N_SPECIALS] = 0.0
        weights = counts ** power
        weights[counts == 0] = 0.0
        total = weights.sum()
        if total <= 0:
            raise DataError("negative sampler needs at least one non-special token")
        self.probs = weights / total
        self.cumulative = np.cumsum(self.probs)
        self.rng = rng if rng is not None else np.random.default_rng(0)

    def draw(self, k: int) -> np.ndarray:
        u = self.rng.random(k)
        return np.searchsorted(self.cumulative, u, side="right")


def generate_pairs(token_ids, window: int) -> list[tuple[int, int]]:
    """All (center, context) pairs with |i-j| <= window inside one sequence,
    ordered by center position then context position."""
    if window < 1:
        raise DataError("window must be >= 1")
    n = len(token_ids)
    pairs = []
    for i in range(n):
        for j in range(max(0, i - window), min(n, i + window + 1)):
            if j != i:
                pairs.append((token_ids[i], token_ids[j]))
    return pairs


def sample_negatives(sampler: NegSampler, k: int, exclude: int) -> np.ndarray:
    """k noise ids, resampling any draw equal to `exclude`."""
    eligible = np.flatnonzero(sampler.probs > 0)
    if eligible.size == 1 and eligible[0] == exclude:
        raise DataError("degenerate vocabulary: the only eligible token is excluded")
    out = sampler.draw(k)
    while True:
        clash = out == exclude
        if not clash.any():
            return out
        out[clash] = sampler.draw(int(clash.sum()))


def _log_sigmoid(x: np.ndarray) -> np.ndarray:
    return -np.logaddexp(0.0, -x)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sgns_loss(v_center, u_context, u_negatives) -> float:
    """Pair loss from raw vectors; the reference form used by gradient checks."""
    pos = float(np.dot(u_context, v_center))
    neg = np.asarray(u_negatives) @ v_center
    return float(-_log_sigmoid(pos) - _log_sigmoid(-neg).sum())


def sgns_step(table: EmbeddingTable, center: int, context: int, negatives, lr: float) -> float:
    """One gradient step on a single pair; returns the pre-update loss."""
    v = len(table.vocab)
    negatives = np.asarray(negatives, dtype=np.int64)
    ids = np.concatenate(([center, context], negatives))
    if ids.min() < 0 or ids.max() >= v:
        raise DataError(f"token id out of range for vocabulary of size {v}")
    v_c = table.input_vectors[center].copy()
    u_ctx = table.context_vectors[context].copy()
    u_neg = table.context_vectors[negatives]

    loss = sgns_loss(v_c, u_ctx, u_neg)

    g_pos = _sigmoid(v_c @ u_ctx) - 1.0
    g_neg = _sigmoid(u_neg @ v_c)
    grad_v = g_pos * u_ctx + g_neg @ u_neg
    table.input_vectors[center] = v_c - lr * grad_v
    table.context_vectors[context] = u_ctx - lr * g_pos * v_c
    np.add.at(table.context_vectors, negatives, -lr * g_neg[:, None] * v_c[None, :])
    return loss


def _chunk_update(table, centers, contexts, negatives, lr) -> float:
    """Vectorized step over a chunk of pairs (gradients from pre-chunk vectors)."""
    v_c = table.input_vectors[centers]                # [B, D]
    u_ctx = table.context_vectors[contexts]           # [B, D]
    u_neg = table.context_vectors[negatives]          # [B, K, D]

    pos = np.einsum("bd,bd->b", v_c, u_ctx)
    neg = np.einsum("bkd,bd->bk", u_neg, v_c)
    loss = float((-_log_sigmoid(pos) - _log_sigmoid(-neg).sum(axis=1)).sum())

    g_pos = _sigmoid(pos) - 1.0                       # [B]
    g_neg = _sigmoid(neg)                             # [B, K]
    grad_v = g_pos[:, None] * u_ctx + np.einsum("bk,bkd->bd", g_neg, u_neg)
    np.add.at(table.input_vectors, centers, -lr * grad_v)
    np.add.at(table.context_vectors, contexts, -lr * g_pos[:, None] * v_c)
    flat_neg = negatives.reshape(-1)
    flat_grad = (g_neg[:, :, None] * v_c[:, None, :]).reshape(-1, v_c.shape[1])
    np.add.at(table.context_vectors, flat_neg, -lr * flat_grad)
    return loss


def corpus_token_stream(
    corpora: Corpus | list[Corpus],
    vocab: Vocabulary,
    mode: str,
    seg_dict: SegmenterDict | None = None,
) -> list[list[int]]:
    """Encode corpora line by line, dropping special ids from the stream."""
    if isinstance(corpora, Corpus):
        corpora = [corpora]
    stream = []
    for corpus in corpora:
        for line in corpus.lines:
            ids = [i for i in vocab.encode(tokenize_line(line, mode, seg_dict))
                   if i >= _N_SPECIALS]
            if ids:
                stream.append(ids)
    return stream


def train_embeddings(
    corpora: Corpus | list[Corpus],
    vocab: Vocabulary,
    config: EmbeddingConfig,
    seg_dict: SegmenterDict | None = None,
    epoch_losses: list | None = None,
) -> EmbeddingTable:
    """Train a table over the concatenated corpora; deterministic given seed.

    Input vectors start uniform(-0.5/dim, 0.5/dim), context vectors at zero.
    The learning rate decays linearly to `min_lr` over all scheduled pairs.
    Pairs are processed in seeded shuffled order, in chunks of
    `config.chunk_size` whose gradients are computed from pre-chunk vectors.
    """
    stream = corpus_token_stream(corpora, vocab, config.mode, seg_dict)
    if not stream:
        raise DataError("no trainable tokens: corpus is empty or fully out-of-vocabulary")

    v, dim = len(vocab), config.dim
    init_rng = substream(config.seed, "init")
    table = EmbeddingTable(
        vocab=vocab,
        input_vectors=init_rng.uniform(-0.5 / dim, 0.5 / dim, size=(v, dim)),
        context_vectors=np.zeros((v, dim)),
    )
    if config.epochs == 0:
        return table

    counts = np.zeros(v)
    for ids in stream:
        np.add.at(counts, ids, 1)
    sampler = NegSampler(counts, config.unigram_power, substream(config.seed, "negatives"))

    pairs = []
    for ids in stream:
        pairs.extend(generate_pairs(ids, config.window))
    pairs = np.asarray(pairs, dtype=np.int64)
    shuffle_rng = substream(config.seed, "shuffle")

    total = config.epochs * len(pairs)
    done = 0
    for _ in range(config.epochs):
        order = shuffle_rng.permutation(len(pairs))
        epoch_loss = 0.0
        for start in range(0, len(order), config.chunk_size):
            chunk = pairs[order[start:start + config.chunk_size]]
            centers, contexts = chunk[:, 0], chunk[:, 1]
            negatives = np.empty((len(chunk), config.negatives_k), dtype=np.int64)
            for row, ctx in enumerate(contexts):
                negatives[row] = sample_negatives(sampler, config.negatives_k, ctx)
            lr = config.lr + (config.min_lr - config.lr) * (done / max(total, 1))
            epoch_loss += _chunk_update(table, centers, contexts, negatives, max(lr, config.min_lr))
            done += len(chunk)
        if epoch_losses is not None:
            epoch_losses.append(epoch_loss / len(pairs))
    return table


def nearest_neighbors(table: EmbeddingTable, token: str, k: int = 10) -> list[tuple[str, float]]:
    """Top-k cosine neighbors over input vectors, query excluded, ties by id."""
    if token not in table.vocab.token_to_id:
        raise DataError(f"token {token!r} not in vocabulary")
    qid = table.vocab.token_to_id[token]
    vectors = table.input_vectors
    norms = np.linalg.norm(vectors, axis=1)
    q = vectors[qid]
    qn = norms[qid]
    denom = norms * qn
    with np.errstate(invalid="ignore", divide="ignore"):
        cosine = np.where(denom > 0, vectors @ q / np.where(denom > 0, denom, 1.0), 0.0)
    order = sorted((i for i in range(len(vectors)) if i != qid),
                   key=lambda i: (-cosine[i], i))
    return [(table.vocab.id_to_token[i], float(cosine[i])) for i in order[:k]]


def save_embeddings(table: EmbeddingTable, path) -> None:
    """Text interchange: header `V D`, then `token v1 ... vD` rows (6 decimals)."""
    for token in table.vocab.id_to_token:
        if any(ch.isspace() for ch in token):
            raise DataError(f"token {token!r} contains whitespace; cannot serialize")
    v, d = table.input_vectors.shape
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{v} {d}\n")
        for i in range(v):
            row = " ".join(f"{x:.6f}" for x in table.input_vectors[i])
            fh.write(f"{table.vocab.id_to_token[i]} {row}\n")


def load_embeddings(path) -> EmbeddingTable:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise DataError(f"{path}:1: malformed header (expected `V D`)")
        try:
            v, d = int(header[0]), int(header[1])
        except ValueError:
            raise DataError(f"{path}:1: malformed header (expected `V D`)") from None
        tokens = []
        vectors = np.zeros((v, d))
        row = 0
        for lineno, line in enumerate(fh, 2):
            line = line.rstrip("\n")
            if not line:
                continue
            if row >= v:
                raise DataError(f"{path}: more rows than header declares ({v})")
            parts = line.split(" ")
            if len(parts) != d + 1:
                raise DataError(f"{path}:{lineno}: expected token plus {d} values")
            tokens.append(parts[0])
            try:
                vectors[row] = [float(x) for x in parts[1:]]
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric field") from None
            row += 1
    if row != v:
        raise DataError(f"{path}: {row} rows but header declares {v}")
    from .tokenization import SPECIAL_TOKENS

    if tuple(tokens[:5]) != SPECIAL_TOKENS:
        raise DataError(f"{path}: embedding file must begin with the special tokens")
    vocab = Vocabulary(
        id_to_token=tokens,
        token_to_id={t: i for i, t in enumerate(tokens)},
        counts=[0] * v,
    )
    return EmbeddingTable(vocab=vocab, input_vectors=vectors,
                          context_vectors=np.zeros((v, d)))
