"""Command-line interface.

Subcommands: corpus stats|clean, vocab build, embed train|neighbors,
pretrain, further-pretrain, finetune, evaluate, experiment run, report.
Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import sys

from . import __version__
from .corpus import (
    CleaningRules,
    SplitSpec,
    clean_corpus,
    corpus_stats,
    ingest_corpus,
    read_ner_dataset,
    read_tc_dataset,
    split_dataset,
    write_corpus,
)
from .encoder import EncoderCheckpoint, EncoderConfig, further_pretrain, pretrain
from .errors import ConfigError, DataError, NumericError
from .experiment import (
    EmbeddingSpec,
    ExperimentConfig,
    emit_report,
    parse_report,
    run_experiment,
    template_config,
)
from .heads import NerModelConfig, TcModelConfig, TrainParams, fine_tune, save_model
from .metrics import evaluate, write_report
from .sgns import (
    EmbeddingConfig,
    load_embeddings,
    nearest_neighbors,
    save_embeddings,
    train_embeddings,
)
from .tokenization import SegmenterDict, Vocabulary, build_vocab


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="regir", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    corpus = sub.add_parser("corpus", help="corpus utilities")
    corpus_sub = corpus.add_subparsers(dest="subcommand", required=True)
    stats = corpus_sub.add_parser("stats", help="line/character statistics")
    stats.add_argument("--in", dest="path", required=True)
    stats.add_argument("--tag", default="general",
                       choices=("general", "in_domain", "close_domain"))
    clean = corpus_sub.add_parser("clean", help="apply cleaning rules")
    clean.add_argument("--in", dest="path", required=True)
    clean.add_argument("--out", required=True)
    clean.add_argument("--tag", default="general")
    clean.add_argument("--min-chars", type=int, default=2)
    clean.add_argument("--no-strip", action="store_true")
    clean.add_argument("--no-dedupe", action="store_true")
    clean.add_argument("--keep-keyword", action="append", default=[])
    clean.add_argument("--drop-pattern", action="append", default=[])

    vocab = sub.add_parser("vocab", help="vocabulary utilities")
    vocab_sub = vocab.add_subparsers(dest="subcommand", required=True)
    vbuild = vocab_sub.add_parser("build", help="build a vocabulary file")
    vbuild.add_argument("--in", dest="path", required=True)
    vbuild.add_argument("--out", required=True)
    vbuild.add_argument("--mode", choices=("char", "word"), default="char")
    vbuild.add_argument("--min-count", type=int, default=1)
    vbuild.add_argument("--dict", dest="dict_path")
    vbuild.add_argument("--tag", default="general")

    embed = sub.add_parser("embed", help="static embeddings")
    embed_sub = embed.add_subparsers(dest="subcommand", required=True)
    etrain = embed_sub.add_parser("train", help="train skip-gram embeddings")
    etrain.add_argument("--corpus", action="append", required=True,
                        help="corpus file; repeat to concatenate corpora")
    etrain.add_argument("--vocab", required=True)
    etrain.add_argument("--out", required=True)
    etrain.add_argument("--dim", type=int, default=300)
    etrain.add_argument("--negatives", type=int, default=5)
    etrain.add_argument("--window", type=int, default=5)
    etrain.add_argument("--epochs", type=int, default=5)
    etrain.add_argument("--lr", type=float, default=0.025)
    etrain.add_argument("--mode", choices=("char", "word"), default="char")
    etrain.add_argument("--dict", dest="dict_path")
    etrain.add_argument("--seed", type=int, default=0)
    eneigh = embed_sub.add_parser("neighbors", help="nearest neighbors by cosine")
    eneigh.add_argument("--embeddings", required=True)
    eneigh.add_argument("--token", required=True)
    eneigh.add_argument("-k", type=int, default=10)

    pre = sub.add_parser("pretrain", help="pretrain the mini encoder")
    pre.add_argument("--corpus", required=True)
    pre.add_argument("--vocab", required=True)
    pre.add_argument("--out", required=True)
    pre.add_argument("--steps", type=int, required=True)
    pre.add_argument("--lr", type=float, default=1e-3)
    pre.add_argument("--batch", type=int, default=8)
    pre.add_argument("--layers", type=int, default=2)
    pre.add_argument("--heads", type=int, default=4)
    pre.add_argument("--d-model", type=int, default=64)
    pre.add_argument("--d-ff", type=int, default=256)
    pre.add_argument("--max-len", type=int, default=64)
    pre.add_argument("--dropout", type=float, default=0.1)
    pre.add_argument("--seed", type=int, default=0)
    pre.add_argument("--tag", default="general")

    fpre = sub.add_parser("further-pretrain",
                          help="continue pretraining on a domain corpus")
    fpre.add_argument("--ckpt", required=True)
    fpre.add_argument("--corpus", required=True)
    fpre.add_argument("--vocab", required=True)
    fpre.add_argument("--out", required=True)
    fpre.add_argument("--steps", type=int, required=True)
    fpre.add_argument("--lr", type=float, default=5e-5)
    fpre.add_argument("--batch", type=int, default=4)
    fpre.add_argument("--seed", type=int)
    fpre.add_argument("--tag", default="in_domain")

    ft = sub.add_parser("finetune", help="train one task model")
    ft.add_argument("--task", choices=("tc", "ner"), required=True)
    ft.add_argument("--model", required=True)
    ft.add_argument("--train", required=True)
    ft.add_argument("--val", help="validation set; default splits --train 0.8:0.2")
    ft.add_argument("--vocab")
    ft.add_argument("--embeddings", help="pretrained embedding file")
    ft.add_argument("--ckpt", help="encoder checkpoint directory")
    ft.add_argument("--out", required=True)
    ft.add_argument("--lr", type=float, default=1e-3)
    ft.add_argument("--epochs", type=int, default=10)
    ft.add_argument("--batch", type=int, default=16)
    ft.add_argument("--padding", type=int, default=64)
    ft.add_argument("--embedding-dim", type=int, default=64)
    ft.add_argument("--hidden", type=int, default=64)
    ft.add_argument("--seed", type=int, default=0)

    ev = sub.add_parser("evaluate", help="score predictions against gold")
    ev.add_argument("--task", choices=("tc", "ner"), required=True)
    ev.add_argument("--pred", required=True)
    ev.add_argument("--gold", required=True)
    ev.add_argument("--mode", choices=("span", "token"), default="span")
    ev.add_argument("--out")

    exp = sub.add_parser("experiment", help="protocol experiments")
    exp_sub = exp.add_subparsers(dest="subcommand", required=True)
    erun = exp_sub.add_parser("run", help="run a grid experiment")
    erun.add_argument("--config", help="experiment config JSON")
    erun.add_argument("--template", choices=("exp1", "exp2", "exp3", "exp4"))
    erun.add_argument("--dataset", help="dataset path (with --template)")
    erun.add_argument("--embeddings", action="append", default=[],
                      help="name=path embedding entry (with --template)")
    erun.add_argument("--checkpoint", action="append", default=[],
                      help="name=dir encoder checkpoint entry (with --template)")
    erun.add_argument("--vocab")
    erun.add_argument("--out", required=True)
    erun.add_argument("--seed", type=int, default=None)
    erun.add_argument("--jobs", type=int, default=1)
    scale = erun.add_mutually_exclusive_group()
    scale.add_argument("--desk", action="store_true", default=True,
                       help="desk-scale epochs (protocol / 10); the default")
    scale.add_argument("--paper-protocol", dest="desk", action="store_false",
                       help="full protocol epoch counts")

    rep = sub.add_parser("report", help="render a report tsv as a text table")
    rep.add_argument("--in", dest="path", required=True)
    rep.add_argument("--format", choices=("tsv", "text-table"), default="text-table")
    rep.add_argument("--out")
    return parser


def _load_seg_dict(path):
    return SegmenterDict.load(path) if path else None


def _cmd_corpus(args) -> int:
    corpus = ingest_corpus(args.path, args.tag)
    if args.subcommand == "stats":
        s = corpus_stats(corpus)
        print(f"lines\t{s.line_count}")
        print(f"total_chars\t{s.total_chars}")
        print(f"cjk_chars\t{s.cjk_chars}")
        print(f"distinct_tokens\t{s.distinct_tokens}")
        return 0
    rules = CleaningRules(
        min_chars=args.min_chars,
        strip_whitespace=not args.no_strip,
        drop_duplicates=not args.no_dedupe,
        keep_keywords=tuple(args.keep_keyword) or None,
        drop_patterns=tuple(args.drop_pattern),
    )
    cleaned = clean_corpus(corpus, rules)
    write_corpus(cleaned, args.out)
    print(f"kept {len(cleaned.lines)} of {len(corpus.lines)} lines -> {args.out}")
    return 0


def _cmd_vocab(args) -> int:
    corpus = ingest_corpus(args.path, args.tag)
    vocab = build_vocab(corpus, mode=args.mode, min_count=args.min_count,
                        seg_dict=_load_seg_dict(args.dict_path))
    vocab.save(args.out)
    print(f"vocabulary of {len(vocab)} tokens -> {args.out}")
    return 0


def _cmd_embed(args) -> int:
    if args.subcommand == "neighbors":
        table = load_embeddings(args.embeddings)
        for token, cosine in nearest_neighbors(table, args.token, args.k):
            print(f"{token}\t{cosine:.4f}")
        return 0
    vocab = Vocabulary.load(args.vocab)
    corpora = [ingest_corpus(p, "general") for p in args.corpus]
    config = EmbeddingConfig(dim=args.dim, negatives_k=args.negatives,
                             window=args.window, epochs=args.epochs, lr=args.lr,
                             mode=args.mode, seed=args.seed)
    losses: list[float] = []
    table = train_embeddings(corpora, vocab, config,
                             seg_dict=_load_seg_dict(args.dict_path),
                             epoch_losses=losses)
    save_embeddings(table, args.out)
    curve = " ".join(f"{v:.4f}" for v in losses)
    print(f"trained {len(vocab)}x{args.dim} embeddings -> {args.out}")
    print(f"mean epoch loss: {curve}")
    return 0


def _cmd_pretrain(args) -> int:
    vocab = Vocabulary.load(args.vocab)
    corpus = ingest_corpus(args.corpus, args.tag)
    config = EncoderConfig(vocab_size=len(vocab), layers=args.layers,
                           heads=args.heads, d_model=args.d_model, d_ff=args.d_ff,
                           max_len=args.max_len, dropout=args.dropout, seed=args.seed)
    ckpt = pretrain(corpus, vocab, config, steps=args.steps, lr=args.lr,
                    batch=args.batch)
    ckpt.save(args.out)
    phase = ckpt.pretrain_history[-1]
    print(f"pretrained {args.steps} steps on {args.tag} -> {args.out} "
          f"(final mean loss {phase.final_mean_loss})")
    return 0


def _cmd_further_pretrain(args) -> int:
    vocab = Vocabulary.load(args.vocab)
    ckpt = EncoderCheckpoint.load(args.ckpt)
    corpus = ingest_corpus(args.corpus, args.tag)
    out = further_pretrain(ckpt, corpus, vocab, steps=args.steps, lr=args.lr,
                           batch=args.batch, seed=args.seed)
    out.save(args.out)
    phase = out.pretrain_history[-1]
    print(f"further-pretrained {args.steps} steps on {args.tag} -> {args.out} "
          f"(final mean loss {phase.final_mean_loss})")
    return 0


def _cmd_finetune(args) -> int:
    if args.task == "tc":
        data = read_tc_dataset(args.train)
        val = read_tc_dataset(args.val) if args.val else None
    else:
        data = read_ner_dataset(args.train)
        val = read_ner_dataset(args.val) if args.val else None
    if val is None:
        data, val = split_dataset(data, SplitSpec(0.8, args.seed))

    init = None
    vocab = Vocabulary.load(args.vocab) if args.vocab else None
    if args.embeddings:
        init = load_embeddings(args.embeddings)
    if args.ckpt:
        init = EncoderCheckpoint.load(args.ckpt)
    if vocab is None and init is None:
        raise ConfigError("finetune needs --vocab, --embeddings, or --ckpt")

    common = dict(kind=args.model, embedding_dim=args.embedding_dim,
                  hidden=args.hidden, seed=args.seed)
    config = TcModelConfig(**common) if args.task == "tc" else NerModelConfig(**common)
    params = TrainParams(epochs=args.epochs, batch_size=args.batch, lr=args.lr,
                         padding=args.padding, seed=args.seed)
    model, history = fine_tune(config, init, data, val, params, vocab)
    save_model(model, args.out, extra_meta={"best_epoch": model.best_epoch})
    for h in history:
        print(f"epoch {h.epoch}\ttrain_loss {h.train_loss:.4f}"
              f"\tval_weighted_f1 {h.val_weighted_f1:.4f}")
    print(f"best epoch {model.best_epoch} weighted F1 {model.best_val_f1:.4f} "
          f"-> {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    if args.task == "tc":
        pred = [ex.label for ex in read_tc_dataset(args.pred).examples]
        gold = [ex.label for ex in read_tc_dataset(args.gold).examples]
    else:
        pred = [list(ex.tags) for ex in read_ner_dataset(args.pred).examples]
        gold = [list(ex.tags) for ex in read_ner_dataset(args.gold).examples]
    report = evaluate(pred, gold, args.task, mode=args.mode)
    if args.out:
        write_report(report, args.out)
    for m in report.per_label:
        print(f"{m.label}\tP {m.precision:.4f}\tR {m.recall:.4f}\tF1 {m.f1:.4f}"
              f"\tn {m.n_i}")
    print(f"WEIGHTED_F1\t{report.weighted_f1:.4f}")
    return 0


def _cmd_experiment(args) -> int:
    if args.config:
        config = ExperimentConfig.load(args.config)
        if args.seed is not None:
            config.seed = args.seed
    elif args.template:
        if not args.dataset:
            raise ConfigError("--template needs --dataset")
        embeddings = None
        if args.embeddings:
            embeddings = []
            for entry in args.embeddings:
                if entry == "random":
                    embeddings.append(EmbeddingSpec("random"))
                    continue
                name, _, path = entry.partition("=")
                if not path:
                    raise ConfigError(f"--embeddings expects name=path, got {entry!r}")
                embeddings.append(EmbeddingSpec(name, path))
        checkpoints = []
        for entry in args.checkpoint:
            name, _, path = entry.partition("=")
            if not path:
                raise ConfigError(f"--checkpoint expects name=dir, got {entry!r}")
            checkpoints.append((name, path))
        config = template_config(args.template, args.dataset, seed=args.seed or 0,
                                 desk=args.desk, embeddings=embeddings,
                                 checkpoints=checkpoints or None, vocab=args.vocab)
    else:
        raise ConfigError("experiment run needs --config or --template")
    report = run_experiment(config, args.out, jobs=args.jobs)
    print(f"report: {args.out}/report.tsv")
    for label, row in zip(report.row_labels, report.cells):
        print(label + "\t" + "\t".join(f"{v:.4f}" for v in row))
    return 0


def _cmd_report(args) -> int:
    report = parse_report(args.path)
    out = args.out or "/dev/stdout"
    emit_report(report, out, args.format)
    return 0


_DISPATCH = {
    "corpus": _cmd_corpus,
    "vocab": _cmd_vocab,
    "embed": _cmd_embed,
    "pretrain": _cmd_pretrain,
    "further-pretrain": _cmd_further_pretrain,
    "finetune": _cmd_finetune,
    "evaluate": _cmd_evaluate,
    "experiment": _cmd_experiment,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
        return _DISPATCH[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
