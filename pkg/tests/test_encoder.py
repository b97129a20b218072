"""Encoder forward contracts, corruption statistics, pretraining behavior,
checkpoint round-trips, and a full-model finite-difference check."""

from __future__ import annotations

import numpy as np
import pytest

from regir import ndgrad as ng
from regir.corpus import Corpus
from regir.encoder import (
    Encoder,
    EncoderCheckpoint,
    EncoderConfig,
    encode,
    further_pretrain,
    make_mlm_example,
    make_nsp_pairs,
    pretrain,
)
from regir.errors import DataError
from regir.seeding import substream
from regir.tokenization import CLS_ID, MASK_ID, PAD_ID, SEP_ID, build_vocab

from conftest import numeric_grad, rel_error


def _corpus(n_lines=30):
    lines = []
    words = ["钢", "梁", "柱", "板", "墙", "混", "凝", "土", "抗", "震"]
    rng = np.random.default_rng(5)
    for _ in range(n_lines):
        lines.append("".join(rng.choice(words) for _ in range(rng.integers(4, 9))))
    return Corpus("general", lines)


@pytest.fixture(scope="module")
def vocab():
    return build_vocab(_corpus(), mode="char")


def _config(vocab, **kw):
    base = dict(vocab_size=len(vocab), layers=2, heads=2, d_model=16,
                d_ff=32, max_len=16, dropout=0.0, seed=3)
    base.update(kw)
    return EncoderConfig(**base)


def _batch(vocab, cfg, batch=2, rng_seed=0):
    rng = np.random.default_rng(rng_seed)
    length = cfg.max_len
    ids = rng.integers(5, len(vocab), size=(batch, length))
    mask = np.ones((batch, length), dtype=np.int64)
    mask[:, length - 3:] = 0
    ids[mask == 0] = PAD_ID
    ids[:, 0] = CLS_ID
    segs = np.zeros((batch, length), dtype=np.int64)
    return ids, segs, mask


class TestForward:
    def test_output_shape(self, vocab):
        cfg = _config(vocab)
        model = Encoder.init(cfg)
        ids, segs, mask = _batch(vocab, cfg)
        out = model.forward(ids, segs, mask)
        assert out.shape == (2, cfg.max_len, cfg.d_model)

    def test_shape_at_desk_defaults(self):
        cfg = EncoderConfig(vocab_size=30, max_len=64, dropout=0.0)
        model = Encoder.init(cfg)
        ids = np.full((2, 64), 6)
        out = model.forward(ids, np.zeros_like(ids), np.ones_like(ids))
        assert out.shape == (2, 64, 64)

    def test_attention_rows_sum_to_one_on_unmasked_keys(self, vocab):
        cfg = _config(vocab)
        model = Encoder.init(cfg)
        ids, segs, mask = _batch(vocab, cfg, batch=3)
        for layer_attn in model.attention_rows(ids, segs, mask):
            sums = layer_attn.sum(axis=-1)
            np.testing.assert_allclose(sums, 1.0, atol=1e-5)
            # weight on padded keys is zero
            assert layer_attn[:, :, :, mask[0] == 0].max() <= 1e-7

    def test_padding_invariance(self, vocab):
        cfg = _config(vocab)
        model = Encoder.init(cfg)
        ids, segs, mask = _batch(vocab, cfg, batch=2, rng_seed=7)
        base = model.forward(ids, segs, mask).values
        altered = ids.copy()
        altered[mask == 0] = 9  # different token ids at padded positions
        out = model.forward(altered, segs, mask).values
        real = mask.astype(bool)
        assert np.abs(out[real] - base[real]).max() <= 1e-5

    def test_length_and_id_errors(self, vocab):
        cfg = _config(vocab)
        model = Encoder.init(cfg)
        too_long = np.full((1, cfg.max_len + 1), 6)
        with pytest.raises(DataError, match="max_len"):
            model.forward(too_long, np.zeros_like(too_long), np.ones_like(too_long))
        bad = np.full((1, 4), len(vocab))
        with pytest.raises(DataError, match="out of range"):
            model.forward(bad, np.zeros_like(bad), np.ones_like(bad))

    def test_encode_function_matches_model(self, vocab):
        cfg = _config(vocab)
        ckpt = pretrain(_corpus(), vocab, cfg, steps=0)
        ids, segs, mask = _batch(vocab, cfg)
        a = encode(ckpt, ids, segs, mask)
        b = Encoder.from_checkpoint(ckpt).forward(ids, segs, mask).values
        np.testing.assert_array_equal(a, b)

    def test_invalid_config(self):
        with pytest.raises(DataError, match="divisible"):
            EncoderConfig(vocab_size=10, d_model=30, heads=4)
        with pytest.raises(DataError, match="max_len"):
            EncoderConfig(vocab_size=10, max_len=1)


class TestMlmExample:
    def test_mask_prob_zero_keeps_input(self, vocab):
        rng = substream(0, "mask")
        ex = make_mlm_example(["钢", "梁"], ["柱"], vocab, 1, 16, rng, mask_prob=0.0)
        assert ex.masked_positions.size == 0
        assert ex.input_ids[0] == CLS_ID
        seq = [CLS_ID] + vocab.encode(["钢", "梁"]) + [SEP_ID] + vocab.encode(["柱"]) + [SEP_ID]
        np.testing.assert_array_equal(ex.input_ids[:len(seq)], seq)
        assert (ex.input_ids[len(seq):] == PAD_ID).all()

    def test_lengths_and_segments(self, vocab):
        rng = substream(1, "mask")
        ex = make_mlm_example(["钢"], ["柱", "板"], vocab, 0, 12, rng)
        assert ex.input_ids.shape == (12,)
        assert ex.segment_ids.shape == (12,)
        assert ex.attention_mask.sum() == 6
        # CLS a SEP carry segment 0, b and its closing SEP carry segment 1
        np.testing.assert_array_equal(ex.segment_ids[:6], [0, 0, 0, 1, 1, 1])
        assert (ex.segment_ids[6:] == 0).all()

    def test_truncates_longer_side_tail_first(self, vocab):
        rng = substream(2, "mask")
        a = ["钢"] * 10
        b = ["柱"] * 3
        ex = make_mlm_example(a, b, vocab, 1, 12, rng, mask_prob=0.0)
        # 12 - 3 specials = 9 token slots; the longer side loses its tail
        assert ex.attention_mask.sum() == 12
        ids = list(ex.input_ids)
        assert ids.count(vocab.token_to_id["钢"]) == 6
        assert ids.count(vocab.token_to_id["柱"]) == 3

    def test_masked_positions_never_specials(self, vocab):
        rng = substream(3, "mask")
        for _ in range(50):
            ex = make_mlm_example(["钢", "梁", "柱"], ["板", "墙"], vocab, 1, 10, rng,
                                  mask_prob=0.9)
            for pos in ex.masked_positions:
                assert ex.attention_mask[pos] == 1
                assert pos not in (0,)  # CLS
                assert ex.original_ids[list(ex.masked_positions).index(pos)] >= 5

    def test_corruption_statistics(self, vocab):
        rng = substream(4, "mask")
        tokens = ["钢", "梁", "柱", "板", "墙"] * 4  # 20 eligible per side pair
        selected = 0
        eligible = 0
        masked = 0
        random_repl = 0
        kept = 0
        while eligible < 100_000:
            ex = make_mlm_example(tokens, tokens, vocab, 1, 64, rng)
            before = [CLS_ID] + vocab.encode(tokens) + [SEP_ID] + vocab.encode(tokens) + [SEP_ID]
            eligible += len(tokens) * 2
            selected += ex.masked_positions.size
            for pos, orig in zip(ex.masked_positions, ex.original_ids):
                now = ex.input_ids[pos]
                assert before[pos] == orig
                if now == MASK_ID:
                    masked += 1
                elif now == orig:
                    kept += 1
                else:
                    random_repl += 1
        assert abs(selected / eligible - 0.15) <= 0.01
        assert abs(masked / selected - 0.80) <= 0.02
        assert abs(random_repl / selected - 0.10) <= 0.015
        assert abs(kept / selected - 0.10) <= 0.015

    def test_fixed_seed_reproducible(self, vocab):
        a = make_mlm_example(["钢", "梁"], ["柱", "板"], vocab, 1, 16, substream(9, "mask"))
        b = make_mlm_example(["钢", "梁"], ["柱", "板"], vocab, 1, 16, substream(9, "mask"))
        np.testing.assert_array_equal(a.input_ids, b.input_ids)
        np.testing.assert_array_equal(a.masked_positions, b.masked_positions)


class TestNspPairs:
    def test_label_balance(self):
        corpus = _corpus(50)
        labels = [lab for _, _, lab in make_nsp_pairs(corpus, substream(0, "nsp"), 10_000)]
        assert abs(np.mean(labels) - 0.5) <= 0.02

    def test_is_next_adjacency(self):
        corpus = _corpus(30)
        index = {line: i for i, line in enumerate(corpus.lines)}
        for a, b, lab in make_nsp_pairs(corpus, substream(1, "nsp"), 500):
            if lab == 1:
                assert index[b] == index[a] + 1

    def test_two_line_corpus_forced_partner(self):
        corpus = Corpus("general", ["线一", "线二"])
        for a, b, lab in make_nsp_pairs(corpus, substream(2, "nsp"), 100):
            assert a == "线一" and b == "线二"

    def test_single_line_rejected(self):
        with pytest.raises(DataError, match=">= 2 lines"):
            list(make_nsp_pairs(Corpus("general", ["单"]), substream(0, "nsp"), 1))


class TestPretrain:
    def test_steps_zero_is_initialization_only(self, vocab):
        cfg = _config(vocab)
        ckpt = pretrain(_corpus(), vocab, cfg, steps=0)
        fresh = Encoder.init(cfg).export_weights()
        for name, arr in ckpt.weights.items():
            np.testing.assert_array_equal(arr, fresh[name])
        assert ckpt.pretrain_history[0].steps == 0

    def test_initial_loss_near_log_v(self, vocab):
        cfg = _config(vocab)
        ckpt = pretrain(_corpus(), vocab, cfg, steps=0)
        model = Encoder.from_checkpoint(ckpt, trainable=False)
        rng = substream(7, "mask")
        pairs = make_nsp_pairs(_corpus(), rng, 64)
        mlm_losses = []
        for a, b, lab in pairs:
            ex = make_mlm_example(list(a), list(b), vocab, lab, cfg.max_len, rng)
            if ex.masked_positions.size == 0:
                continue
            hidden = model.forward(ex.input_ids[None, :], ex.segment_ids[None, :],
                                   ex.attention_mask[None, :])
            logits = model.mlm_logits(hidden, ex.masked_positions)
            mlm_losses.append(float(ng.cross_entropy(logits, ex.original_ids).values))
        mean = np.mean(mlm_losses)
        assert abs(mean - np.log(len(vocab))) <= 0.1 * np.log(len(vocab))

    def test_loss_decreases_with_training(self, vocab):
        corpus = _corpus(200)
        cfg = _config(vocab, layers=1, d_model=16, d_ff=32, max_len=16)
        ckpt = pretrain(corpus, vocab, cfg, steps=300, lr=2e-3, batch=4)
        curve = ckpt.pretrain_history[0].loss_curve
        assert curve[-1][1] < curve[0][1]

    def test_deterministic_checkpoints(self, vocab, tmp_path):
        cfg = _config(vocab, layers=1)
        a = pretrain(_corpus(), vocab, cfg, steps=20, lr=1e-3, batch=2)
        b = pretrain(_corpus(), vocab, cfg, steps=20, lr=1e-3, batch=2)
        a.save(tmp_path / "a")
        b.save(tmp_path / "b")
        assert (tmp_path / "a" / "weights.bin").read_bytes() == \
            (tmp_path / "b" / "weights.bin").read_bytes()
        assert (tmp_path / "a" / "manifest").read_bytes() == \
            (tmp_path / "b" / "manifest").read_bytes()

    def test_vocab_size_mismatch(self, vocab):
        cfg = _config(vocab, vocab_size=len(vocab) + 3)
        with pytest.raises(DataError, match="vocab_size"):
            pretrain(_corpus(), vocab, cfg, steps=0)


class TestFurtherPretrain:
    def test_steps_zero_appends_history_only(self, vocab):
        cfg = _config(vocab, layers=1)
        base = pretrain(_corpus(), vocab, cfg, steps=5, lr=1e-3, batch=2)
        domain = Corpus("in_domain", _corpus(20).lines)
        out = further_pretrain(base, domain, vocab, steps=0)
        assert len(out.pretrain_history) == 2
        assert out.pretrain_history[1].corpus_tag == "in_domain"
        for name, arr in out.weights.items():
            np.testing.assert_array_equal(arr, base.weights[name])

    def test_lr_zero_keeps_weights(self, vocab):
        cfg = _config(vocab, layers=1)
        base = pretrain(_corpus(), vocab, cfg, steps=3, lr=1e-3, batch=2)
        domain = Corpus("in_domain", _corpus(20).lines)
        out = further_pretrain(base, domain, vocab, steps=5, lr=0.0, batch=2)
        for name, arr in out.weights.items():
            np.testing.assert_array_equal(arr, base.weights[name])

    def test_fingerprint_mismatch_rejected(self, vocab):
        cfg = _config(vocab, layers=1)
        base = pretrain(_corpus(), vocab, cfg, steps=0)
        other_vocab = build_vocab(Corpus("general", ["完全不同的语料库字符"]), mode="char")
        with pytest.raises(DataError, match="fingerprint"):
            further_pretrain(base, Corpus("in_domain", ["域"] * 4), other_vocab, steps=1)


class TestCheckpointIo:
    def test_round_trip(self, vocab, tmp_path):
        cfg = _config(vocab, layers=1)
        ckpt = pretrain(_corpus(), vocab, cfg, steps=10, lr=1e-3, batch=2)
        ckpt.save(tmp_path / "ck")
        loaded = EncoderCheckpoint.load(tmp_path / "ck")
        assert loaded.config == ckpt.config
        assert loaded.vocab_fingerprint == ckpt.vocab_fingerprint
        assert [p.steps for p in loaded.pretrain_history] == [10]
        assert set(loaded.weights) == set(ckpt.weights)
        for name in ckpt.weights:
            np.testing.assert_array_equal(loaded.weights[name], ckpt.weights[name])

    def test_manifest_is_json_with_tensor_index(self, vocab, tmp_path):
        import json

        cfg = _config(vocab, layers=1)
        pretrain(_corpus(), vocab, cfg, steps=0).save(tmp_path / "ck")
        manifest = json.loads((tmp_path / "ck" / "manifest").read_text(encoding="utf-8"))
        assert manifest["kind"] == "encoder"
        entry = manifest["tensors"][0]
        assert {"name", "shape", "offset", "nbytes"} <= set(entry)


class TestGradients:
    def test_full_encoder_matches_finite_differences(self, vocab):
        cfg = EncoderConfig(vocab_size=12, layers=1, heads=1, d_model=8,
                            d_ff=16, max_len=6, dropout=0.0, seed=1)
        ids = np.array([[CLS_ID, 5, 6, SEP_ID, 7, SEP_ID]])
        segs = np.array([[0, 0, 0, 0, 1, 1]])
        mask = np.ones_like(ids)
        flat_positions = np.array([1, 4])
        targets = np.array([8, 9])
        nsp = np.array([1])

        with ng.use_dtype(np.float64):
            # random point away from the near-flat 0.02-scale init so every
            # weight (biases included) has a well-conditioned gradient
            rng = np.random.default_rng(17)
            weights = {k: rng.normal(0.0, 0.3, size=v.shape)
                       for k, v in init_weights(cfg).items()}

            def loss_with(wdict):
                model = Encoder(cfg, {k: (v if isinstance(v, ng.Tensor) else ng.Tensor(v))
                                      for k, v in wdict.items()})
                hidden = model.forward(ids, segs, mask)
                return ng.cross_entropy(model.mlm_logits(hidden, flat_positions), targets) \
                    + ng.cross_entropy(model.nsp_logits(hidden), nsp)

            tensors = {k: ng.Tensor(v.copy(), requires_grad=True) for k, v in weights.items()}
            ng.backward(loss_with(tensors))

            for name in weights:
                def f(x, _n=name):
                    probe = {k: v.copy() for k, v in weights.items()}
                    probe[_n] = x
                    return float(loss_with(probe).values)

                numeric = numeric_grad(f, weights[name].copy(), h=1e-5)
                err = rel_error(tensors[name].grad, numeric)
                assert err <= 1e-5, f"{name}: rel error {err:.2e}"


from regir.encoder import init_weights  # noqa: E402  (used by gradient test)
