"""Miniature bidirectional transformer encoder with masked-token and
sentence-adjacency pretraining.

The encoder sums token, position and segment embeddings and runs them
through L blocks of multi-head self-attention (padding-masked, no causal
mask) and a feed-forward layer, each followed by add-and-norm.  Pretraining
minimizes cross-entropy on corrupted token positions plus a two-way
adjacency classification read from the CLS vector.  Further pretraining
continues the same objective on a domain corpus from existing weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import ndgrad as ng
from .ckptio import load_checkpoint, save_checkpoint
from .corpus import Corpus
from .errors import DataError, NumericError
from .seeding import substream
from .tokenization import (
    CLS_ID,
    MASK_ID,
    PAD_ID,
    SEP_ID,
    SegmenterDict,
    Vocabulary,
    tokenize_line,
)

_N_SPECIALS = 5
NEG_INF = -1e9


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    layers: int = 2
    heads: int = 4
    d_model: int = 64
    d_ff: int = 256
    max_len: int = 64
    dropout: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.d_model % self.heads != 0:
            raise DataError(f"d_model={self.d_model} not divisible by heads={self.heads}")
        if self.max_len < 2:
            raise DataError("max_len must be >= 2 (room for CLS/SEP)")

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size, "layers": self.layers, "heads": self.heads,
            "d_model": self.d_model, "d_ff": self.d_ff, "max_len": self.max_len,
            "dropout": self.dropout, "seed": self.seed,
        }


@dataclass
class PretrainPhase:
    corpus_tag: str
    steps: int
    final_mean_loss: float | None
    loss_curve: list = field(default_factory=list)  # [(step, mean loss), ...]

    def to_dict(self) -> dict:
        return {
            "corpus_tag": self.corpus_tag,
            "steps": self.steps,
            "final_mean_loss": self.final_mean_loss,
            "loss_curve": [[int(s), float(v)] for s, v in self.loss_curve],
        }


@dataclass
class EncoderCheckpoint:
    config: EncoderConfig
    weights: dict[str, np.ndarray]
    vocab_fingerprint: str
    pretrain_history: list[PretrainPhase] = field(default_factory=list)

    def save(self, path) -> None:
        meta = {
            "kind": "encoder",
            "config": self.config.to_dict(),
            "vocab_fingerprint": self.vocab_fingerprint,
            "pretrain_history": [p.to_dict() for p in self.pretrain_history],
        }
        save_checkpoint(path, meta, self.weights)

    @classmethod
    def load(cls, path) -> "EncoderCheckpoint":
        meta, tensors = load_checkpoint(path)
        if meta.get("kind") != "encoder":
            raise DataError(f"{path}: not an encoder checkpoint")
        history = [
            PretrainPhase(p["corpus_tag"], p["steps"], p["final_mean_loss"],
                          [tuple(x) for x in p.get("loss_curve", [])])
            for p in meta.get("pretrain_history", [])
        ]
        return cls(
            config=EncoderConfig(**meta["config"]),
            weights=tensors,
            vocab_fingerprint=meta["vocab_fingerprint"],
            pretrain_history=history,
        )


def _weight_names(cfg: EncoderConfig) -> list[tuple[str, tuple]]:
    names: list[tuple[str, tuple]] = [
        ("tok_emb", (cfg.vocab_size, cfg.d_model)),
        ("pos_emb", (cfg.max_len, cfg.d_model)),
        ("seg_emb", (2, cfg.d_model)),
        ("emb_ln_g", (cfg.d_model,)),
        ("emb_ln_b", (cfg.d_model,)),
    ]
    for i in range(cfg.layers):
        for mat in ("wq", "wk", "wv", "wo"):
            names.append((f"layer{i}.{mat}", (cfg.d_model, cfg.d_model)))
        for vec in ("bq", "bk", "bv", "bo"):
            names.append((f"layer{i}.{vec}", (cfg.d_model,)))
        names += [
            (f"layer{i}.ln1_g", (cfg.d_model,)),
            (f"layer{i}.ln1_b", (cfg.d_model,)),
            (f"layer{i}.w1", (cfg.d_model, cfg.d_ff)),
            (f"layer{i}.b1", (cfg.d_ff,)),
            (f"layer{i}.w2", (cfg.d_ff, cfg.d_model)),
            (f"layer{i}.b2", (cfg.d_model,)),
            (f"layer{i}.ln2_g", (cfg.d_model,)),
            (f"layer{i}.ln2_b", (cfg.d_model,)),
        ]
    names += [
        ("mlm_w", (cfg.d_model, cfg.vocab_size)),
        ("mlm_b", (cfg.vocab_size,)),
        ("nsp_w", (cfg.d_model, 2)),
        ("nsp_b", (2,)),
    ]
    return names


def init_weights(cfg: EncoderConfig) -> dict[str, np.ndarray]:
    """normal(0, 0.02) matrices and embeddings, zero biases, unit layer-norm gains."""
    rng = substream(cfg.seed, "init")
    weights = {}
    for name, shape in _weight_names(cfg):
        base = name.split(".")[-1]
        if base.endswith("ln_g") or base in ("ln1_g", "ln2_g"):
            weights[name] = np.ones(shape, dtype=np.float32)
        elif len(shape) == 1:
            weights[name] = np.zeros(shape, dtype=np.float32)
        else:
            weights[name] = rng.normal(0.0, 0.02, size=shape).astype(np.float32)
    return weights


class Encoder:
    """Runtime wrapper: named parameter tensors plus the forward pass."""

    def __init__(self, config: EncoderConfig, params: dict[str, ng.Tensor]):
        self.config = config
        self.params = params

    @classmethod
    def init(cls, config: EncoderConfig, trainable: bool = True) -> "Encoder":
        return cls.from_weights(config, init_weights(config), trainable)

    @classmethod
    def from_weights(cls, config, weights, trainable: bool = True) -> "Encoder":
        params = {
            name: ng.Tensor(arr.copy(), requires_grad=trainable)
            for name, arr in weights.items()
        }
        return cls(config, params)

    @classmethod
    def from_checkpoint(cls, ckpt: EncoderCheckpoint, trainable: bool = True) -> "Encoder":
        return cls.from_weights(ckpt.config, ckpt.weights, trainable)

    def export_weights(self) -> dict[str, np.ndarray]:
        return {name: p.values.astype(np.float32).copy() for name, p in self.params.items()}

    def backbone_params(self) -> dict[str, ng.Tensor]:
        return {k: v for k, v in self.params.items()
                if not k.startswith(("mlm_", "nsp_"))}

    def forward(
        self,
        input_ids: np.ndarray,
        segment_ids: np.ndarray,
        attention_mask: np.ndarray,
        training: bool = False,
        rng: np.random.Generator | None = None,
        attn_out: list | None = None,
    ) -> ng.Tensor:
        """Contextual vectors [batch x len x d_model]."""
        cfg = self.config
        p = self.params
        ids = np.asarray(input_ids)
        segs = np.asarray(segment_ids)
        mask = np.asarray(attention_mask)
        batch, length = ids.shape
        if length > cfg.max_len:
            raise DataError(f"sequence length {length} exceeds max_len {cfg.max_len}")
        if ids.min() < 0 or ids.max() >= cfg.vocab_size:
            raise DataError(f"token id out of range for vocab_size {cfg.vocab_size}")
        if segs.shape != ids.shape or mask.shape != ids.shape:
            raise DataError("segment_ids/attention_mask must match input_ids shape")
        drop = cfg.dropout if training else 0.0
        if drop and rng is None:
            raise DataError("training-mode forward needs an rng for dropout")

        x = ng.embedding_lookup(p["tok_emb"], ids)
        x = x + ng.embedding_lookup(p["pos_emb"], np.tile(np.arange(length), (batch, 1)))
        x = x + ng.embedding_lookup(p["seg_emb"], segs)
        x = ng.layer_norm(x, p["emb_ln_g"], p["emb_ln_b"])
        x = ng.dropout(x, drop, rng, training)

        heads = cfg.heads
        head_dim = cfg.d_model // heads
        scale = 1.0 / np.sqrt(head_dim)
        # additive mask hides padded keys from every query
        key_bias = ((1.0 - mask) * NEG_INF)[:, None, None, :].astype(x.values.dtype)

        for i in range(cfg.layers):
            def lin(name, inp, layer=i):
                return ng.matmul(inp, p[f"layer{layer}.{name[0]}"]) + p[f"layer{layer}.{name[1]}"]

            q = lin(("wq", "bq"), x)
            k = lin(("wk", "bk"), x)
            v = lin(("wv", "bv"), x)

            def split_heads(t):
                return ng.transpose(t.reshape((batch, length, heads, head_dim)),
                                    (0, 2, 1, 3))

            qh, kh, vh = split_heads(q), split_heads(k), split_heads(v)
            scores = ng.matmul(qh, ng.transpose(kh, (0, 1, 3, 2))) * scale
            scores = scores + ng.Tensor(key_bias)
            attn = ng.softmax(scores, axis=-1)
            if attn_out is not None:
                attn_out.append(attn.values)
            ctx = ng.matmul(attn, vh)
            ctx = ng.transpose(ctx, (0, 2, 1, 3)).reshape((batch, length, cfg.d_model))
            ctx = lin(("wo", "bo"), ctx)
            ctx = ng.dropout(ctx, drop, rng, training)
            x = ng.layer_norm(x + ctx, p[f"layer{i}.ln1_g"], p[f"layer{i}.ln1_b"])

            ff = ng.relu(ng.matmul(x, p[f"layer{i}.w1"]) + p[f"layer{i}.b1"])
            ff = ng.matmul(ff, p[f"layer{i}.w2"]) + p[f"layer{i}.b2"]
            ff = ng.dropout(ff, drop, rng, training)
            x = ng.layer_norm(x + ff, p[f"layer{i}.ln2_g"], p[f"layer{i}.ln2_b"])
        return x

    def attention_rows(self, input_ids, segment_ids, attention_mask) -> list[np.ndarray]:
        """Per-layer attention weights [batch x heads x len x len] (diagnostics)."""
        collected: list[np.ndarray] = []
        self.forward(input_ids, segment_ids, attention_mask, attn_out=collected)
        return collected

    def mlm_logits(self, hidden: ng.Tensor, flat_positions: np.ndarray) -> ng.Tensor:
        """Logits over the vocabulary at flattened (batch*len) positions."""
        batch, length, d = hidden.shape
        flat = hidden.reshape((batch * length, d))
        picked = ng.embedding_lookup(flat, flat_positions)
        return ng.matmul(picked, self.params["mlm_w"]) + self.params["mlm_b"]

    def nsp_logits(self, hidden: ng.Tensor) -> ng.Tensor:
        cls = hidden[:, 0, :]
        return ng.matmul(cls, self.params["nsp_w"]) + self.params["nsp_b"]


def encode(ckpt: EncoderCheckpoint, input_ids, segment_ids, attention_mask) -> np.ndarray:
    """Evaluation-mode contextual vectors for a batch, as a numpy array."""
    model = Encoder.from_checkpoint(ckpt, trainable=False)
    return model.forward(input_ids, segment_ids, attention_mask, training=False).values


# ---------------------------------------------------------------------------
# pretraining data
# ---------------------------------------------------------------------------


@dataclass
class MlmExample:
    input_ids: np.ndarray        # [max_len]
    segment_ids: np.ndarray      # [max_len], 0 for first segment, 1 for second
    attention_mask: np.ndarray   # [max_len], 1 on real tokens
    masked_positions: np.ndarray
    original_ids: np.ndarray     # ids at masked_positions before corruption
    nsp_label: int               # 1 = is_next, 0 = not_next


def make_nsp_pairs(corpus: Corpus, rng: np.random.Generator, count: int):
    """Yield (sent_a, sent_b, is_next) line pairs, balanced around 1/2."""
    n = len(corpus.lines)
    if n < 2:
        raise DataError("sentence-pair sampling needs a corpus with >= 2 lines")
    for _ in range(count):
        a = int(rng.integers(0, n - 1))
        if rng.random() < 0.5:
            yield corpus.lines[a], corpus.lines[a + 1], 1
        else:
            b = int(rng.integers(0, n - 1))
            if b >= a:
                b += 1  # uniform over all other lines
            yield corpus.lines[a], corpus.lines[b], 0


def make_mlm_example(
    tokens_a: list[str],
    tokens_b: list[str],
    vocab: Vocabulary,
    nsp_label: int,
    max_len: int,
    rng: np.random.Generator,
    mask_prob: float = 0.15,
) -> MlmExample:
    """[CLS] a [SEP] b [SEP] with 80/10/10 corruption of selected tokens."""
    ids_a = vocab.encode(tokens_a)
    ids_b = vocab.encode(tokens_b)
    while len(ids_a) + len(ids_b) > max_len - 3:
        longer = ids_a if len(ids_a) >= len(ids_b) else ids_b
        longer.pop()

    input_ids = np.full(max_len, PAD_ID, dtype=np.int64)
    segment_ids = np.zeros(max_len, dtype=np.int64)
    attention_mask = np.zeros(max_len, dtype=np.int64)
    seq = [CLS_ID] + ids_a + [SEP_ID] + ids_b + [SEP_ID]
    input_ids[:len(seq)] = seq
    attention_mask[:len(seq)] = 1
    b_start = 2 + len(ids_a)
    segment_ids[b_start:len(seq)] = 1

    eligible = np.arange(max_len)[
        (input_ids != PAD_ID) & (input_ids != CLS_ID) & (input_ids != SEP_ID)
        & (attention_mask == 1)
    ]
    masked_positions = []
    original_ids = []
    v = len(vocab)
    for pos in eligible:
        if rng.random() >= mask_prob:
            continue
        masked_positions.append(pos)
        original_ids.append(int(input_ids[pos]))
        roll = rng.random()
        if roll < 0.8:
            input_ids[pos] = MASK_ID
        elif roll < 0.9:
            if v > _N_SPECIALS:
                input_ids[pos] = int(rng.integers(_N_SPECIALS, v))
        # else: keep the original token
    return MlmExample(
        input_ids=input_ids,
        segment_ids=segment_ids,
        attention_mask=attention_mask,
        masked_positions=np.asarray(masked_positions, dtype=np.int64),
        original_ids=np.asarray(original_ids, dtype=np.int64),
        nsp_label=nsp_label,
    )


# ---------------------------------------------------------------------------
# pretraining loops
# ---------------------------------------------------------------------------


def _batch_arrays(examples: list[MlmExample]):
    ids = np.stack([e.input_ids for e in examples])
    segs = np.stack([e.segment_ids for e in examples])
    mask = np.stack([e.attention_mask for e in examples])
    nsp = np.asarray([e.nsp_label for e in examples])
    max_len = ids.shape[1]
    flat_positions = []
    targets = []
    for row, e in enumerate(examples):
        flat_positions.extend(row * max_len + e.masked_positions)
        targets.extend(e.original_ids)
    return ids, segs, mask, nsp, np.asarray(flat_positions, dtype=np.int64), \
        np.asarray(targets, dtype=np.int64)


def batch_loss(model: Encoder, examples, training: bool,
               rng: np.random.Generator | None = None) -> ng.Tensor:
    """Combined corrupted-token + adjacency loss for a batch of examples."""
    ids, segs, mask, nsp, flat_positions, targets = _batch_arrays(examples)
    hidden = model.forward(ids, segs, mask, training=training, rng=rng)
    loss = ng.cross_entropy(model.nsp_logits(hidden), nsp)
    if len(flat_positions):
        loss = loss + ng.cross_entropy(model.mlm_logits(hidden, flat_positions), targets)
    return loss


def mlm_eval_loss(ckpt: EncoderCheckpoint, corpus: Corpus, vocab: Vocabulary,
                  steps: int, batch: int, seed: int, mode: str = "char",
                  seg_dict: SegmenterDict | None = None) -> float:
    """Held-out mean loss at fixed seeded examples (no weight updates)."""
    model = Encoder.from_checkpoint(ckpt, trainable=False)
    rng = substream(seed, "eval")
    data = make_nsp_pairs(corpus, rng, steps * batch)
    losses = []
    for _ in range(steps):
        examples = [
            make_mlm_example(tokenize_line(a, mode, seg_dict),
                             tokenize_line(b, mode, seg_dict),
                             vocab, label, ckpt.config.max_len, rng)
            for a, b, label in (next(data) for _ in range(batch))
        ]
        losses.append(float(batch_loss(model, examples, training=False).values))
    return float(np.mean(losses))


def _pretrain_loop(
    model: Encoder,
    corpus: Corpus,
    vocab: Vocabulary,
    steps: int,
    lr: float,
    batch: int,
    seed: int,
    mode: str,
    seg_dict: SegmenterDict | None,
    phase_name: str = "pretrain",
    log_every: int = 50,
) -> PretrainPhase:
    rng = substream(seed, f"{phase_name}:mask")
    drop_rng = substream(seed, f"{phase_name}:dropout")
    pairs = make_nsp_pairs(corpus, rng, steps * batch)
    optimizer = ng.make_optimizer("adam", lr)
    params = model.params
    curve = []
    window: list[float] = []
    for step in range(1, steps + 1):
        examples = [
            make_mlm_example(tokenize_line(a, mode, seg_dict),
                             tokenize_line(b, mode, seg_dict),
                             vocab, label, model.config.max_len, rng)
            for a, b, label in (next(pairs) for _ in range(batch))
        ]
        ng.zero_grad(params)
        loss = batch_loss(model, examples, training=True, rng=drop_rng)
        value = float(loss.values)
        if not np.isfinite(value):
            raise NumericError(f"non-finite pretraining loss at step {step}")
        ng.backward(loss)
        ng.fill_missing_grads(params)  # a batch may select no masked positions
        ng.optimizer_step(optimizer, params)
        window.append(value)
        if step % log_every == 0 or step == steps:
            curve.append((step, float(np.mean(window))))
            window = []
    final = curve[-1][1] if curve else None
    return PretrainPhase(corpus.source_tag, steps, final, curve)


def pretrain(
    corpus: Corpus,
    vocab: Vocabulary,
    config: EncoderConfig,
    steps: int,
    lr: float = 1e-3,
    batch: int = 8,
    mode: str = "char",
    seg_dict: SegmenterDict | None = None,
) -> EncoderCheckpoint:
    """Pretrain from scratch; steps=0 returns the seeded initialization."""
    if config.vocab_size != len(vocab):
        raise DataError(
            f"config.vocab_size={config.vocab_size} but vocabulary has {len(vocab)} tokens")
    model = Encoder.init(config, trainable=True)
    if steps == 0:
        return EncoderCheckpoint(config, model.export_weights(), vocab.fingerprint(),
                                 [PretrainPhase(corpus.source_tag, 0, None, [])])
    phase = _pretrain_loop(model, corpus, vocab, steps, lr, batch, config.seed,
                           mode, seg_dict)
    return EncoderCheckpoint(config, model.export_weights(), vocab.fingerprint(), [phase])


def further_pretrain(
    ckpt: EncoderCheckpoint,
    domain_corpus: Corpus,
    vocab: Vocabulary,
    steps: int,
    lr: float = 5e-5,
    batch: int = 4,
    seed: int | None = None,
    mode: str = "char",
    seg_dict: SegmenterDict | None = None,
) -> EncoderCheckpoint:
    """Continue pretraining on a domain corpus from existing weights."""
    if ckpt.vocab_fingerprint != vocab.fingerprint():
        raise DataError(
            "vocabulary fingerprint mismatch: checkpoint was pretrained with a "
            "different vocabulary than the one supplied for the domain corpus")
    seed = ckpt.config.seed if seed is None else seed
    model = Encoder.from_checkpoint(ckpt, trainable=True)
    if steps == 0:
        phase = PretrainPhase(domain_corpus.source_tag, 0, None, [])
    else:
        phase = _pretrain_loop(model, domain_corpus, vocab, steps, lr, batch, seed,
                               mode, seg_dict,
                               phase_name=f"further{len(ckpt.pretrain_history)}")
    return EncoderCheckpoint(
        config=replace(ckpt.config),
        weights=model.export_weights(),
        vocab_fingerprint=ckpt.vocab_fingerprint,
        pretrain_history=list(ckpt.pretrain_history) + [phase],
    )
