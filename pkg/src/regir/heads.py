"""Task models: text classification and sequence labeling.

Classification kinds
    text_cnn        parallel width-{2,3,4} convolutions, max-over-time, linear
    text_rnn        bidirectional LSTM, last-state concat, linear
    text_rnn_att    as text_rnn plus additive attention over the states
    text_rcnn       BiLSTM, [fwd; emb; bwd] per token, tanh projection, max, linear
    dpcnn           width-3 region conv, two-conv residual blocks with stride-2
                    max-pooling until length <= 2, linear
    transformer_cls randomly initialized mini encoder, CLS vector, linear
    encoder_ft      pretrained encoder checkpoint, CLS vector, linear

Sequence-labeling kinds
    lstm / bilstm       per-token hidden state, linear to tag scores,
                        token-level cross-entropy, argmax decode (BIO-repaired)
    bilstm_crf          BiLSTM emissions under a linear-chain CRF
    bilstm_cnn_crf      word mode adds a width-3 character convolution per
                        token; in char mode it degenerates to bilstm_crf
    encoder_token_ft    encoder contextual vectors, linear to tag scores

All models expose `params` (name -> Tensor) and train through `fine_tune`,
which tracks validation weighted F1 per epoch and returns the
best-validation checkpoint.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import ndgrad as ng
from .ckptio import save_checkpoint
from .corpus import NerDataset, TcDataset
from .encoder import Encoder, EncoderCheckpoint, EncoderConfig
from .errors import DataError, NumericError
from .labels import NER_TAG_TO_ID, NER_TAGS, TC_CATEGORIES, TC_CATEGORY_TO_ID
from .metrics import MetricsReport, evaluate
from .sgns import EmbeddingTable
from .seeding import substream
from .tokenization import CLS_ID, PAD_ID, SEP_ID, SegmenterDict, Vocabulary, tokenize_line

TC_KINDS = ("text_cnn", "text_rnn", "text_rnn_att", "text_rcnn", "dpcnn",
            "transformer_cls", "encoder_ft")
NER_KINDS = ("lstm", "bilstm", "bilstm_crf", "bilstm_cnn_crf", "encoder_token_ft")
ENCODER_KINDS = ("transformer_cls", "encoder_ft", "encoder_token_ft")
CRF_KINDS = ("bilstm_crf", "bilstm_cnn_crf")

N_CATEGORIES = len(TC_CATEGORIES)  # 7
N_TAGS = len(NER_TAGS)             # 15


@dataclass(frozen=True)
class TcModelConfig:
    kind: str
    embedding_source: str = "random"
    embedding_dim: int = 64
    hidden: int = 64
    filters: int = 32
    attention_dim: int = 64
    dropout: float = 0.1
    freeze_embeddings: bool = False
    freeze_depth: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in TC_KINDS:
            raise DataError(f"unknown classification model kind {self.kind!r}")


@dataclass(frozen=True)
class NerModelConfig:
    kind: str
    embedding_source: str = "random"
    embedding_dim: int = 64
    hidden: int = 64
    char_dim: int = 16
    char_window: int = 3
    char_filters: int = 16
    mode: str = "char"
    freeze_embeddings: bool = False
    freeze_depth: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in NER_KINDS:
            raise DataError(f"unknown sequence-labeling model kind {self.kind!r}")


@dataclass
class CrfParams:
    transitions: ng.Tensor   # [T x T], from-tag -> to-tag
    start_scores: ng.Tensor  # [T]
    end_scores: ng.Tensor    # [T]


# ---------------------------------------------------------------------------
# parameter helpers
# ---------------------------------------------------------------------------


def _normal(rng, shape, std=0.02):
    return ng.Tensor(rng.normal(0.0, std, size=shape), requires_grad=True)


def _zeros(shape):
    return ng.Tensor(np.zeros(shape), requires_grad=True)


def _lstm_params(rng, in_dim, hidden, prefix):
    w = _normal(rng, (in_dim + hidden, 4 * hidden), std=0.1)
    b = np.zeros(4 * hidden)
    b[hidden:2 * hidden] = 1.0  # forget-gate bias
    return {f"{prefix}.w": w, f"{prefix}.b": ng.Tensor(b, requires_grad=True)}


def _init_embedding_matrix(config, vocab_size, init, rng_emb):
    """Embedding rows come either from a pretrained table or from their own
    substream, so every non-embedding weight is identical across sources."""
    if isinstance(init, EmbeddingTable):
        if init.input_vectors.shape[0] != vocab_size:
            raise DataError(
                f"embedding table has {init.input_vectors.shape[0]} rows but the "
                f"vocabulary has {vocab_size}")
        values = init.input_vectors.astype(ng.default_dtype())
        if init.dim != config.embedding_dim:
            raise DataError(
                f"embedding table dim {init.dim} != config.embedding_dim "
                f"{config.embedding_dim}")
    else:
        values = rng_emb.normal(0.0, 0.02, size=(vocab_size, config.embedding_dim))
    return ng.Tensor(values, requires_grad=not config.freeze_embeddings)


def _run_lstm(x, mask_consts, w, b, hidden, reverse=False):
    """Masked LSTM over [B x T x D]; states freeze across padded steps.

    Returns (per-step states in input order, final state)."""
    batch, length, _ = x.shape
    h = ng.Tensor(np.zeros((batch, hidden)))
    c = ng.Tensor(np.zeros((batch, hidden)))
    order = range(length - 1, -1, -1) if reverse else range(length)
    states: list = [None] * length
    for t in order:
        xt = x[:, t, :]
        z = ng.matmul(ng.concat([xt, h], axis=1), w) + b
        i = ng.sigmoid(z[:, 0:hidden])
        f = ng.sigmoid(z[:, hidden:2 * hidden])
        g = ng.tanh(z[:, 2 * hidden:3 * hidden])
        o = ng.sigmoid(z[:, 3 * hidden:4 * hidden])
        c_new = f * c + i * g
        h_new = o * ng.tanh(c_new)
        m, inv = mask_consts[t]
        c = c_new * m + c * inv
        h = h_new * m + h * inv
        states[t] = h
    return states, h


def _mask_consts(mask):
    consts = []
    m = np.asarray(mask, dtype=ng.default_dtype())
    for t in range(m.shape[1]):
        col = m[:, t:t + 1]
        consts.append((ng.Tensor(col), ng.Tensor(1.0 - col)))
    return consts


def _stack_time(states):
    batch, hidden = states[0].shape
    return ng.concat([s.reshape((batch, 1, hidden)) for s in states], axis=1)


def _mask_bias(mask, dtype):
    # additive -1e9 on padded positions, [B x T x 1]
    return ng.Tensor(((1.0 - np.asarray(mask)) * -1e9)[:, :, None].astype(dtype))


# ---------------------------------------------------------------------------
# classification models
# ---------------------------------------------------------------------------


class TcModel:
    def __init__(self, config: TcModelConfig, vocab_size: int, init=None):
        self.config = config
        self.vocab_size = vocab_size
        self.encoder: Encoder | None = None
        rng = substream(config.seed, "init")
        rng_emb = substream(config.seed, "emb")
        p: dict[str, ng.Tensor] = {}
        c = config
        if c.kind == "text_cnn":
            for w in (2, 3, 4):
                p[f"conv{w}.k"] = _normal(rng, (w, c.embedding_dim, c.filters), std=0.1)
                p[f"conv{w}.b"] = _zeros((c.filters,))
            p["out.w"] = _normal(rng, (3 * c.filters, N_CATEGORIES), std=0.1)
            p["out.b"] = _zeros((N_CATEGORIES,))
        elif c.kind in ("text_rnn", "text_rnn_att", "text_rcnn"):
            p.update(_lstm_params(rng, c.embedding_dim, c.hidden, "fwd"))
            p.update(_lstm_params(rng, c.embedding_dim, c.hidden, "bwd"))
            if c.kind == "text_rnn":
                p["out.w"] = _normal(rng, (2 * c.hidden, N_CATEGORIES), std=0.1)
            elif c.kind == "text_rnn_att":
                p["att.w"] = _normal(rng, (2 * c.hidden, c.attention_dim), std=0.1)
                p["att.b"] = _zeros((c.attention_dim,))
                p["att.v"] = _normal(rng, (c.attention_dim, 1), std=0.1)
                p["out.w"] = _normal(rng, (2 * c.hidden, N_CATEGORIES), std=0.1)
            else:
                p["proj.w"] = _normal(
                    rng, (2 * c.hidden + c.embedding_dim, c.hidden), std=0.1)
                p["proj.b"] = _zeros((c.hidden,))
                p["out.w"] = _normal(rng, (c.hidden, N_CATEGORIES), std=0.1)
            p["out.b"] = _zeros((N_CATEGORIES,))
        elif c.kind == "dpcnn":
            p["region.k"] = _normal(rng, (3, c.embedding_dim, c.filters), std=0.1)
            p["region.b"] = _zeros((c.filters,))
            p["block.k1"] = _normal(rng, (3, c.filters, c.filters), std=0.1)
            p["block.k2"] = _normal(rng, (3, c.filters, c.filters), std=0.1)
            p["out.w"] = _normal(rng, (c.filters, N_CATEGORIES), std=0.1)
            p["out.b"] = _zeros((N_CATEGORIES,))
        elif c.kind in ("transformer_cls", "encoder_ft"):
            if c.kind == "encoder_ft":
                if not isinstance(init, EncoderCheckpoint):
                    raise DataError("encoder_ft requires an EncoderCheckpoint init")
                self.encoder = Encoder.from_checkpoint(init, trainable=True)
            else:
                enc_cfg = EncoderConfig(
                    vocab_size=vocab_size, layers=2, heads=4, d_model=c.hidden,
                    d_ff=4 * c.hidden, max_len=64, dropout=c.dropout, seed=c.seed)
                self.encoder = Encoder.init(enc_cfg, trainable=True)
            d_model = self.encoder.config.d_model
            p.update(_freeze_encoder(self.encoder, c.freeze_depth))
            p["cls.w"] = _normal(rng, (d_model, N_CATEGORIES), std=0.02)
            p["cls.b"] = _zeros((N_CATEGORIES,))
        if c.kind not in ENCODER_KINDS:
            p["emb"] = _init_embedding_matrix(c, vocab_size, init, rng_emb)
        self.params = {k: v for k, v in p.items() if v.requires_grad}
        self.all_params = p

    def forward(self, ids, mask, segs=None, training=False, rng=None) -> ng.Tensor:
        c = self.config
        p = self.all_params
        drop = c.dropout if training else 0.0
        if c.kind in ("transformer_cls", "encoder_ft"):
            if segs is None:
                segs = np.zeros_like(ids)
            hidden = self.encoder.forward(ids, segs, mask, training=training, rng=rng)
            cls = hidden[:, 0, :]
            return ng.matmul(cls, p["cls.w"]) + p["cls.b"]

        x = ng.embedding_lookup(p["emb"], ids)
        if c.kind == "text_cnn":
            pooled = []
            for w in (2, 3, 4):
                conv = ng.relu(ng.conv1d(x, p[f"conv{w}.k"]) + p[f"conv{w}.b"])
                pooled.append(ng.max_over_time(conv))
            feat = ng.concat(pooled, axis=1)
            feat = ng.dropout(feat, drop, rng, training)
            return ng.matmul(feat, p["out.w"]) + p["out.b"]

        if c.kind in ("text_rnn", "text_rnn_att", "text_rcnn"):
            consts = _mask_consts(mask)
            fwd_states, fwd_last = _run_lstm(x, consts, p["fwd.w"], p["fwd.b"], c.hidden)
            bwd_states, bwd_last = _run_lstm(x, consts, p["bwd.w"], p["bwd.b"],
                                             c.hidden, reverse=True)
            if c.kind == "text_rnn":
                feat = ng.concat([fwd_last, bwd_last], axis=1)
                feat = ng.dropout(feat, drop, rng, training)
                return ng.matmul(feat, p["out.w"]) + p["out.b"]
            states = ng.concat([_stack_time(fwd_states), _stack_time(bwd_states)], axis=2)
            if c.kind == "text_rnn_att":
                u = ng.tanh(ng.matmul(states, p["att.w"]) + p["att.b"])
                scores = ng.matmul(u, p["att.v"]) + _mask_bias(mask, u.values.dtype)
                alpha = ng.softmax(scores, axis=1)           # [B x T x 1]
                pooled = ng.matmul(ng.transpose(alpha, (0, 2, 1)), states)
                feat = pooled.reshape((ids.shape[0], 2 * c.hidden))
                feat = ng.dropout(feat, drop, rng, training)
                return ng.matmul(feat, p["out.w"]) + p["out.b"]
            mixed = ng.concat([states[:, :, :c.hidden], x, states[:, :, c.hidden:]], axis=2)
            proj = ng.tanh(ng.matmul(mixed, p["proj.w"]) + p["proj.b"])
            feat = ng.max_over_time(proj + _mask_bias(mask, proj.values.dtype))
            feat = ng.dropout(feat, drop, rng, training)
            return ng.matmul(feat, p["out.w"]) + p["out.b"]

        if c.kind == "dpcnn":
            feat = self._dpcnn_features(x, p)
            feat = ng.dropout(feat, drop, rng, training)
            return ng.matmul(feat, p["out.w"]) + p["out.b"]
        raise DataError(f"unknown kind {c.kind!r}")

    def _dpcnn_features(self, x, p):
        batch = x.shape[0]

        def pad1(t):
            zeros = ng.Tensor(np.zeros((batch, 1, t.shape[2]), dtype=t.values.dtype))
            return ng.concat([zeros, t, zeros], axis=1)

        def conv_block(t):
            y = ng.conv1d(pad1(ng.relu(t)), p["block.k1"])
            y = ng.conv1d(pad1(ng.relu(y)), p["block.k2"])
            return t + y

        def halve(t):
            # stride-2 max-pool via max(a, b) = a + relu(b - a)
            length = t.shape[1] - (t.shape[1] % 2)
            a = t[:, 0:length:2, :]
            b = t[:, 1:length:2, :]
            return a + ng.relu(b + (-a))

        t = ng.conv1d(pad1(x), p["region.k"]) + p["region.b"]
        t = conv_block(t)
        while t.shape[1] > 2:
            t = conv_block(halve(t))
        return ng.max_over_time(t)


def _freeze_encoder(encoder: Encoder, freeze_depth: int) -> dict[str, ng.Tensor]:
    """Trainable backbone params under the freeze policy: depth 0 trains all,
    depth k freezes the embeddings and the bottom k blocks."""
    out = {}
    for name, tensor in encoder.backbone_params().items():
        frozen = False
        if freeze_depth > 0:
            if name.startswith(("tok_emb", "pos_emb", "seg_emb", "emb_ln")):
                frozen = True
            elif name.startswith("layer"):
                layer_idx = int(name.split(".")[0][len("layer"):])
                frozen = layer_idx < freeze_depth
        tensor.requires_grad = not frozen
        out[f"encoder.{name}"] = tensor
    return out


def tc_forward(model: TcModel, ids, mask, segs=None) -> np.ndarray:
    """Evaluation-mode class logits [batch x 7]."""
    return model.forward(np.asarray(ids), np.asarray(mask), segs).values


# ---------------------------------------------------------------------------
# sequence-labeling models
# ---------------------------------------------------------------------------


class NerModel:
    def __init__(self, config: NerModelConfig, vocab_size: int, init=None,
                 char_vocab: dict[str, int] | None = None):
        self.config = config
        self.vocab_size = vocab_size
        self.encoder: Encoder | None = None
        self.crf: CrfParams | None = None
        self.char_vocab = char_vocab
        rng = substream(config.seed, "init")
        rng_emb = substream(config.seed, "emb")
        c = config
        p: dict[str, ng.Tensor] = {}
        self.use_char_conv = c.kind == "bilstm_cnn_crf" and c.mode == "word"
        if c.kind == "encoder_token_ft":
            if not isinstance(init, EncoderCheckpoint):
                raise DataError("encoder_token_ft requires an EncoderCheckpoint init")
            self.encoder = Encoder.from_checkpoint(init, trainable=True)
            p.update(_freeze_encoder(self.encoder, c.freeze_depth))
            p["tag.w"] = _normal(rng, (self.encoder.config.d_model, N_TAGS), std=0.02)
            p["tag.b"] = _zeros((N_TAGS,))
        else:
            in_dim = c.embedding_dim
            if c.kind in ("bilstm", "bilstm_crf", "bilstm_cnn_crf"):
                if self.use_char_conv:
                    if char_vocab is None:
                        raise DataError("bilstm_cnn_crf in word mode needs a char vocabulary")
                    p["char_emb"] = _normal(rng, (len(char_vocab) + 2, c.char_dim))
                    p["char_conv.k"] = _normal(
                        rng, (c.char_window, c.char_dim, c.char_filters), std=0.1)
                    in_dim += c.char_filters
                p.update(_lstm_params(rng, in_dim, c.hidden, "fwd"))
                p.update(_lstm_params(rng, in_dim, c.hidden, "bwd"))
                p["tag.w"] = _normal(rng, (2 * c.hidden, N_TAGS), std=0.1)
            else:  # lstm
                p.update(_lstm_params(rng, in_dim, c.hidden, "fwd"))
                p["tag.w"] = _normal(rng, (c.hidden, N_TAGS), std=0.1)
            p["tag.b"] = _zeros((N_TAGS,))
            p["emb"] = _init_embedding_matrix(c, vocab_size, init, rng_emb)
        if c.kind in CRF_KINDS:
            self.crf = CrfParams(
                transitions=_normal(rng, (N_TAGS, N_TAGS), std=0.01),
                start_scores=_normal(rng, (N_TAGS,), std=0.01),
                end_scores=_normal(rng, (N_TAGS,), std=0.01),
            )
            p["crf.transitions"] = self.crf.transitions
            p["crf.start"] = self.crf.start_scores
            p["crf.end"] = self.crf.end_scores
        self.params = {k: v for k, v in p.items() if v.requires_grad}
        self.all_params = p

    def emissions(self, ids, mask, segs=None, char_ids=None,
                  training=False, rng=None) -> ng.Tensor:
        """Per-token tag scores [batch x len x 15]."""
        c = self.config
        p = self.all_params
        if c.kind == "encoder_token_ft":
            if segs is None:
                segs = np.zeros_like(ids)
            hidden = self.encoder.forward(ids, segs, mask, training=training, rng=rng)
            return ng.matmul(hidden, p["tag.w"]) + p["tag.b"]
        x = ng.embedding_lookup(p["emb"], ids)
        if self.use_char_conv:
            if char_ids is None:
                raise DataError("word-mode bilstm_cnn_crf needs char_ids")
            batch, length, n_chars = char_ids.shape
            ce = ng.embedding_lookup(p["char_emb"], char_ids.reshape(batch * length, n_chars))
            conv = ng.relu(ng.conv1d(ce, p["char_conv.k"]))
            feat = ng.max_over_time(conv).reshape((batch, length, c.char_filters))
            x = ng.concat([x, feat], axis=2)
        consts = _mask_consts(mask)
        fwd_states, _ = _run_lstm(x, consts, p["fwd.w"], p["fwd.b"], c.hidden)
        if c.kind == "lstm":
            states = _stack_time(fwd_states)
        else:
            bwd_states, _ = _run_lstm(x, consts, p["bwd.w"], p["bwd.b"],
                                      c.hidden, reverse=True)
            states = ng.concat([_stack_time(fwd_states), _stack_time(bwd_states)], axis=2)
        return ng.matmul(states, p["tag.w"]) + p["tag.b"]


def ner_emissions(model: NerModel, ids, mask, segs=None, char_ids=None) -> np.ndarray:
    """Evaluation-mode tag scores [batch x len x 15]."""
    return model.emissions(np.asarray(ids), np.asarray(mask), segs, char_ids).values


# ---------------------------------------------------------------------------
# linear-chain CRF
# ---------------------------------------------------------------------------


def _logsumexp(a, axis=None):
    m = a.max(axis=axis, keepdims=True)
    return (m + np.log(np.exp(a - m).sum(axis=axis, keepdims=True))).squeeze(axis)


def crf_neg_log_likelihood(emissions: ng.Tensor, tags, params: CrfParams) -> ng.Tensor:
    """loss = logZ - score(tags); gradients via forward-backward marginals.

    `emissions` is [len x T] for one sequence, `tags` the gold tag ids.
    """
    tags = np.asarray(tags, dtype=np.int64)
    length, n_tags = emissions.shape
    if length < 1:
        raise DataError("CRF needs at least one position")
    if tags.shape != (length,) or tags.min() < 0 or tags.max() >= n_tags:
        raise DataError(f"invalid tag sequence for emissions of shape {emissions.shape}")

    em = emissions.values.astype(np.float64)
    trans = params.transitions.values.astype(np.float64)
    start = params.start_scores.values.astype(np.float64)
    end = params.end_scores.values.astype(np.float64)

    alpha = np.zeros((length, n_tags))
    alpha[0] = start + em[0]
    for t in range(1, length):
        alpha[t] = em[t] + _logsumexp(alpha[t - 1][:, None] + trans, axis=0)
    log_z = float(_logsumexp(alpha[-1] + end, axis=0))

    pos = np.arange(length)
    score = float(start[tags[0]] + em[pos, tags].sum() + end[tags[-1]])
    if length > 1:
        score += float(trans[tags[:-1], tags[1:]].sum())
    loss_value = np.asarray(log_z - score, dtype=emissions.values.dtype)

    beta = np.zeros((length, n_tags))
    beta[-1] = end
    for t in range(length - 2, -1, -1):
        beta[t] = _logsumexp(trans + (em[t + 1] + beta[t + 1])[None, :], axis=1)
    unary = np.exp(alpha + beta - log_z)

    def bw(g):
        d_em = unary.copy()
        d_em[pos, tags] -= 1.0
        d_trans = np.zeros_like(trans)
        for t in range(1, length):
            d_trans += np.exp(
                alpha[t - 1][:, None] + trans + (em[t] + beta[t])[None, :] - log_z)
        if length > 1:
            np.add.at(d_trans, (tags[:-1], tags[1:]), -1.0)
        d_start = unary[0].copy()
        d_start[tags[0]] -= 1.0
        d_end = unary[-1].copy()
        d_end[tags[-1]] -= 1.0
        cast = emissions.values.dtype
        return (g * d_em.astype(cast), g * d_trans.astype(cast),
                g * d_start.astype(cast), g * d_end.astype(cast))

    return ng.custom_node(
        loss_value,
        (emissions, params.transitions, params.start_scores, params.end_scores),
        bw, "crf_nll")


def viterbi_decode(emissions, params: CrfParams) -> list[int]:
    """Best-scoring tag path; ties resolve to the lowest tag id while
    backtracking (argmax takes the first maximum)."""
    em = np.asarray(emissions.values if isinstance(emissions, ng.Tensor) else emissions,
                    dtype=np.float64)
    length, n_tags = em.shape
    if length < 1:
        raise DataError("cannot decode an empty sequence")
    trans = params.transitions.values.astype(np.float64)
    score = params.start_scores.values.astype(np.float64) + em[0]
    back = np.zeros((length, n_tags), dtype=np.int64)
    for t in range(1, length):
        candidates = score[:, None] + trans
        back[t] = candidates.argmax(axis=0)
        score = candidates.max(axis=0) + em[t]
    score = score + params.end_scores.values.astype(np.float64)
    best = int(score.argmax())
    path = [best]
    for t in range(length - 1, 0, -1):
        best = int(back[t, best])
        path.append(best)
    path.reverse()
    return path


def repair_bio(tags: list[str]) -> list[str]:
    """Read a stray I-x (no open span of label x) as B-x."""
    out = []
    open_label = None
    for tag in tags:
        if tag == "O":
            out.append(tag)
            open_label = None
            continue
        prefix, label = tag.split("-", 1)
        if prefix == "I" and open_label != label:
            tag = f"B-{label}"
        out.append(tag)
        open_label = label
    return out


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------


def _pad_ids(id_lists, padding):
    ids = np.full((len(id_lists), padding), PAD_ID, dtype=np.int64)
    mask = np.zeros((len(id_lists), padding), dtype=np.int64)
    for row, seq in enumerate(id_lists):
        seq = seq[:padding]
        ids[row, :len(seq)] = seq
        mask[row, :len(seq)] = 1
    return ids, mask


def tc_batch(examples, vocab: Vocabulary, padding: int, encoder_style: bool,
             mode: str = "char", seg_dict: SegmenterDict | None = None):
    id_lists = []
    labels = []
    for ex in examples:
        tok_ids = vocab.encode(tokenize_line(ex.text, mode, seg_dict))
        if encoder_style:
            tok_ids = [CLS_ID] + tok_ids[:padding - 2] + [SEP_ID]
        id_lists.append(tok_ids)
        labels.append(TC_CATEGORY_TO_ID[ex.label])
    ids, mask = _pad_ids(id_lists, padding)
    return ids, mask, np.asarray(labels, dtype=np.int64)


def ner_batch(examples, vocab: Vocabulary, padding: int, encoder_style: bool,
              char_vocab: dict[str, int] | None = None, max_word_len: int = 8):
    id_lists = []
    tag_rows = np.zeros((len(examples), padding), dtype=np.int64)
    tag_mask = np.zeros((len(examples), padding), dtype=np.int64)
    for row, ex in enumerate(examples):
        tok_ids = vocab.encode(list(ex.tokens))
        tag_ids = [NER_TAG_TO_ID[t] for t in ex.tags]
        if encoder_style:
            keep = padding - 2
            tok_ids = [CLS_ID] + tok_ids[:keep] + [SEP_ID]
            tag_ids = tag_ids[:keep]
            offset = 1
        else:
            tok_ids = tok_ids[:padding]
            tag_ids = tag_ids[:padding]
            offset = 0
        id_lists.append(tok_ids)
        tag_rows[row, offset:offset + len(tag_ids)] = tag_ids
        tag_mask[row, offset:offset + len(tag_ids)] = 1
    ids, mask = _pad_ids(id_lists, padding)
    char_ids = None
    if char_vocab is not None:
        char_ids = np.zeros((len(examples), padding, max_word_len), dtype=np.int64)
        for row, ex in enumerate(examples):
            for col, token in enumerate(list(ex.tokens)[:padding]):
                for k, ch in enumerate(token[:max_word_len]):
                    char_ids[row, col, k] = char_vocab.get(ch, 1)
    return ids, mask, tag_rows, tag_mask, char_ids


def build_char_vocab(dataset: NerDataset) -> dict[str, int]:
    """0 = pad, 1 = unknown, then characters of the training tokens."""
    chars = sorted({ch for ex in dataset.examples for tok in ex.tokens for ch in tok})
    return {ch: i + 2 for i, ch in enumerate(chars)}


# ---------------------------------------------------------------------------
# prediction + fine-tuning
# ---------------------------------------------------------------------------


@dataclass
class TrainParams:
    epochs: int = 10
    batch_size: int = 16
    lr: float = 1e-3
    padding: int = 64
    seed: int = 0
    mode: str = "char"
    seg_dict: SegmenterDict | None = None
    ner_metric_mode: str = "span"
    log: list = field(default_factory=list)


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    val_weighted_f1: float
    val_report: MetricsReport


def predict_tc(model: TcModel, dataset: TcDataset, vocab, params: TrainParams) -> list[str]:
    encoder_style = model.config.kind in ENCODER_KINDS
    out = []
    for start in range(0, len(dataset), params.batch_size):
        chunk = dataset.examples[start:start + params.batch_size]
        ids, mask, _ = tc_batch(chunk, vocab, params.padding, encoder_style,
                                params.mode, params.seg_dict)
        logits = model.forward(ids, mask).values
        out.extend(TC_CATEGORIES[i] for i in logits.argmax(axis=1))
    return out


def predict_ner(model: NerModel, dataset: NerDataset, vocab,
                params: TrainParams) -> tuple[list[list[str]], list[list[str]]]:
    """(predicted tag sequences, gold tag sequences), truncated alike."""
    encoder_style = model.config.kind == "encoder_token_ft"
    keep = params.padding - 2 if encoder_style else params.padding
    preds = []
    golds = []
    for start in range(0, len(dataset), params.batch_size):
        chunk = dataset.examples[start:start + params.batch_size]
        ids, mask, tags, tag_mask, char_ids = ner_batch(
            chunk, vocab, params.padding, encoder_style, model.char_vocab)
        em = model.emissions(ids, mask, char_ids=char_ids)
        for row, ex in enumerate(chunk):
            n = min(len(ex.tokens), keep)
            offset = 1 if encoder_style else 0
            row_em = em[row, offset:offset + n, :]
            if model.crf is not None:
                path = viterbi_decode(row_em, model.crf)
                preds.append([NER_TAGS[i] for i in path])
            else:
                path = row_em.values.argmax(axis=1)
                preds.append(repair_bio([NER_TAGS[i] for i in path]))
            golds.append(list(ex.tags[:n]))
    return preds, golds


def _batch_loss_tc(model, chunk, vocab, params, training, rng):
    encoder_style = model.config.kind in ENCODER_KINDS
    ids, mask, labels = tc_batch(chunk, vocab, params.padding, encoder_style,
                                 params.mode, params.seg_dict)
    logits = model.forward(ids, mask, training=training, rng=rng)
    return ng.cross_entropy(logits, labels)


def _batch_loss_ner(model, chunk, vocab, params, training, rng):
    encoder_style = model.config.kind == "encoder_token_ft"
    ids, mask, tags, tag_mask, char_ids = ner_batch(
        chunk, vocab, params.padding, encoder_style, model.char_vocab)
    em = model.emissions(ids, mask, char_ids=char_ids, training=training, rng=rng)
    if model.crf is not None:
        total = None
        for row in range(len(chunk)):
            n = int(tag_mask[row].sum())
            row_em = em[row, 0:n, :]
            nll = crf_neg_log_likelihood(row_em, tags[row, :n], model.crf)
            total = nll if total is None else total + nll
        return total * (1.0 / len(chunk))
    batch, length, n_tags = em.shape
    return ng.cross_entropy(em.reshape((batch * length, n_tags)),
                            tags.reshape(-1), mask=tag_mask.reshape(-1))


def _validate(model, task, val_set, vocab, params) -> MetricsReport:
    if task == "tc":
        preds = predict_tc(model, val_set, vocab, params)
        gold = [ex.label for ex in val_set.examples]
        return evaluate(preds, gold, "tc")
    preds, gold = predict_ner(model, val_set, vocab, params)
    return evaluate(preds, gold, "ner", mode=params.ner_metric_mode)


def fine_tune(config, init, train_set, val_set, params: TrainParams,
              vocab: Vocabulary | None = None):
    """Train a task model, validating after every epoch.

    Returns (model, history); the model carries the weights of the epoch with
    the highest validation weighted F1 (earliest epoch on ties) plus
    `best_epoch` / `best_val_f1` attributes.  Sequences longer than the
    padding size are truncated for both training and evaluation.
    """
    if len(train_set.examples) == 0:
        raise DataError("empty training set")
    task = "tc" if isinstance(config, TcModelConfig) else "ner"
    if isinstance(init, EmbeddingTable):
        vocab = init.vocab if vocab is None else vocab
    if vocab is None:
        raise DataError("fine_tune needs a vocabulary (or an EmbeddingTable init)")
    if isinstance(init, EncoderCheckpoint) and \
            init.vocab_fingerprint != vocab.fingerprint():
        raise DataError("vocabulary fingerprint mismatch between checkpoint and vocab")

    char_vocab = None
    if task == "ner":
        if config.kind == "bilstm_cnn_crf" and config.mode == "word":
            char_vocab = build_char_vocab(train_set)
        model = NerModel(config, len(vocab), init, char_vocab)
        batch_loss_fn = _batch_loss_ner
    else:
        model = TcModel(config, len(vocab), init)
        batch_loss_fn = _batch_loss_tc

    optimizer = ng.make_optimizer("adam", params.lr)
    shuffle_rng = substream(params.seed, "shuffle")
    drop_rng = substream(params.seed, "dropout")
    history: list[EpochMetrics] = []
    best = None  # (f1, epoch, weights)
    examples = train_set.examples
    for epoch in range(1, params.epochs + 1):
        order = shuffle_rng.permutation(len(examples))
        epoch_loss = 0.0
        batches = 0
        for start in range(0, len(order), params.batch_size):
            chunk = [examples[i] for i in order[start:start + params.batch_size]]
            ng.zero_grad(model.params)
            loss = batch_loss_fn(model, chunk, vocab, params, True, drop_rng)
            value = float(loss.values)
            if not np.isfinite(value):
                raise NumericError(f"non-finite loss at epoch {epoch}")
            ng.backward(loss)
            ng.fill_missing_grads(model.params)
            ng.optimizer_step(optimizer, model.params)
            epoch_loss += value
            batches += 1
        report = _validate(model, task, val_set, vocab, params)
        history.append(EpochMetrics(epoch, epoch_loss / max(batches, 1),
                                    report.weighted_f1, report))
        if best is None or report.weighted_f1 > best[0]:
            best = (report.weighted_f1, epoch,
                    {k: v.values.copy() for k, v in model.all_params.items()})
    if best is not None:
        for name, values in best[2].items():
            model.all_params[name].values = values
        model.best_val_f1 = best[0]
        model.best_epoch = best[1]
    return model, history


def save_model(model, path, extra_meta: dict | None = None) -> None:
    """Manifest + raw-array checkpoint, same layout as encoder checkpoints."""
    cfg = model.config
    meta = {
        "kind": cfg.kind,
        "task": "tc" if isinstance(model, TcModel) else "ner",
        "config": {k: v for k, v in cfg.__dict__.items()},
        "vocab_size": model.vocab_size,
    }
    if extra_meta:
        meta.update(extra_meta)
    tensors = {name: t.values.astype(np.float32) for name, t in model.all_params.items()}
    save_checkpoint(path, meta, tensors)
