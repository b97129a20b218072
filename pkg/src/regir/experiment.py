"""Config-driven experiment runner: grid search over learning rates and
models, best-validation-epoch selection, and table reports.

An experiment is a grid of trials.  Traditional templates (exp1/exp2) cross
model kinds with embedding sources and report models x embeddings, each cell
the best trial over the learning-rate grid.  Encoder templates (exp3/exp4)
cross checkpoints with learning rates and report lr x models.  One seeded
split is shared by every trial in the experiment; per-trial randomness flows
from named substreams of the experiment seed, so identical configs produce
byte-identical reports and model checkpoints.
"""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

from .corpus import (
    Corpus,
    SplitSpec,
    read_ner_dataset,
    read_tc_dataset,
    split_dataset,
)
from .encoder import EncoderCheckpoint
from .errors import ConfigError, DataError
from .heads import (
    NER_KINDS,
    TC_KINDS,
    NerModelConfig,
    TcModelConfig,
    TrainParams,
    fine_tune,
    save_model,
)
from .seeding import subseed
from .sgns import load_embeddings
from .tokenization import Vocabulary, build_vocab

TABLE_SHAPES = ("model_x_embedding", "lr_x_model")


@dataclass(frozen=True)
class ModelSpec:
    name: str
    kind: str
    checkpoint: str | None = None  # path to an encoder checkpoint directory


@dataclass(frozen=True)
class EmbeddingSpec:
    name: str
    path: str | None = None  # None = random initialization


@dataclass
class ExperimentConfig:
    task: str
    dataset: str
    models: list[ModelSpec]
    embeddings: list[EmbeddingSpec]
    lr_grid: list[float]
    epochs: int
    batch_size: int
    padding_size: int = 64
    train_ratio: float = 0.8
    seed: int = 0
    vocab: str | None = None
    table_shape: str = "model_x_embedding"
    ner_metric_mode: str = "span"
    embedding_dim: int = 64
    hidden: int = 64
    mode: str = "char"
    save_models: bool = True

    def __post_init__(self):
        if self.task not in ("tc", "ner"):
            raise ConfigError(f"invalid config field task={self.task!r}")
        if not self.lr_grid:
            raise ConfigError("invalid config field lr_grid: must be nonempty")
        if self.epochs < 1:
            raise ConfigError(f"invalid config field epochs={self.epochs}: must be >= 1")
        if self.table_shape not in TABLE_SHAPES:
            raise ConfigError(f"invalid config field table_shape={self.table_shape!r}")
        if not self.models:
            raise ConfigError("invalid config field models: must be nonempty")
        if not self.embeddings:
            raise ConfigError("invalid config field embeddings: must be nonempty")
        valid = TC_KINDS if self.task == "tc" else NER_KINDS
        for spec in self.models:
            if spec.kind not in valid:
                raise ConfigError(
                    f"invalid config field models: kind {spec.kind!r} not valid for "
                    f"task {self.task!r}")
        if self.table_shape == "lr_x_model" and len(self.embeddings) != 1:
            raise ConfigError(
                "invalid config field embeddings: lr_x_model tables need exactly one "
                "embedding entry")

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        data = dict(raw)
        try:
            models = [ModelSpec(**m) if isinstance(m, dict) else ModelSpec(m, m)
                      for m in data.pop("models")]
            embeddings = [EmbeddingSpec(**e) if isinstance(e, dict) else EmbeddingSpec(e)
                          for e in data.pop("embeddings", [{"name": "random"}])]
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"invalid config field models/embeddings: {exc}") from exc
        try:
            return cls(models=models, embeddings=embeddings, **data)
        except TypeError as exc:
            raise ConfigError(f"invalid config field: {exc}") from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: malformed JSON: {exc}") from exc
        return cls.from_dict(raw)


@dataclass
class TrialResult:
    model: str
    embedding: str
    lr: float
    seed: int
    val_f1_series: list[float]
    best_epoch: int
    best_weighted_f1: float
    wall_time_s: float
    artifact: str = ""

    def to_dict(self) -> dict:
        return {
            "model": self.model, "embedding": self.embedding, "lr": self.lr,
            "seed": self.seed, "val_f1_series": self.val_f1_series,
            "best_epoch": self.best_epoch, "best_weighted_f1": self.best_weighted_f1,
            "wall_time_s": self.wall_time_s, "artifact": self.artifact,
        }


@dataclass
class ExperimentReport:
    task: str
    row_kind: str            # "model" or "lr"
    col_kind: str            # "embedding" or "model"
    row_labels: list[str]
    col_labels: list[str]
    cells: list[list[float]]         # weighted F1, rounded to 4 decimals
    cell_trials: list[list[str]]     # trial id per cell
    conventions: str = "ner counting=span, O excluded; tc counts all 7 categories"


def trial_id(model: str, embedding: str, lr: float) -> str:
    return f"{model}__{embedding}__{lr:g}"


def grid_select(trials: list[TrialResult]) -> TrialResult:
    """Best trial: max weighted F1, ties to the smaller lr, then the earlier
    best epoch."""
    if not trials:
        raise DataError("grid_select: empty trial list")
    return min(trials, key=lambda t: (-t.best_weighted_f1, t.lr, t.best_epoch))


def _load_vocab_for(config: ExperimentConfig, emb: EmbeddingSpec, dataset):
    if emb.path is not None:
        table = load_embeddings(emb.path)
        return table.vocab, table
    if config.vocab:
        return Vocabulary.load(config.vocab), None
    if config.task == "tc":
        lines = [ex.text for ex in dataset.examples]
    else:
        lines = ["".join(ex.tokens) for ex in dataset.examples]
    return build_vocab(Corpus("general", lines, provenance="dataset"), mode="char"), None


def _model_config(config: ExperimentConfig, spec: ModelSpec):
    model_seed = subseed(config.seed, f"model:{spec.name}")
    common = dict(kind=spec.kind, embedding_dim=config.embedding_dim,
                  hidden=config.hidden, seed=model_seed)
    if config.task == "tc":
        return TcModelConfig(**common)
    return NerModelConfig(mode=config.mode, **common)


def run_trial(config: ExperimentConfig, spec: ModelSpec, emb: EmbeddingSpec,
              lr: float) -> tuple[TrialResult, object]:
    """One grid cell: load, split, fine-tune, score.  Pure in (config, axes)."""
    dataset = read_tc_dataset(config.dataset) if config.task == "tc" \
        else read_ner_dataset(config.dataset)
    train, val = split_dataset(dataset, SplitSpec(config.train_ratio, config.seed))
    vocab, table = _load_vocab_for(config, emb, dataset)

    init = table
    if spec.checkpoint is not None:
        init = EncoderCheckpoint.load(spec.checkpoint)
    model_config = _model_config(config, spec)
    params = TrainParams(
        epochs=config.epochs,
        batch_size=config.batch_size,
        lr=lr,
        padding=config.padding_size,
        seed=subseed(config.seed, f"train:{trial_id(spec.name, emb.name, lr)}"),
        mode=config.mode,
        ner_metric_mode=config.ner_metric_mode,
    )
    started = time.monotonic()
    model, history = fine_tune(model_config, init, train, val, params, vocab)
    elapsed = time.monotonic() - started
    series = [round(h.val_weighted_f1, 6) for h in history]
    result = TrialResult(
        model=spec.name,
        embedding=emb.name,
        lr=lr,
        seed=config.seed,
        val_f1_series=series,
        best_epoch=model.best_epoch,
        best_weighted_f1=round(model.best_val_f1, 6),
        wall_time_s=elapsed,
    )
    return result, model


def _trial_worker(config_dict: dict, spec: ModelSpec, emb: EmbeddingSpec, lr: float):
    config = ExperimentConfig.from_dict(config_dict)
    result, model = run_trial(config, spec, emb, lr)
    return result, model


def _config_dict(config: ExperimentConfig) -> dict:
    raw = dict(config.__dict__)
    raw["models"] = [dict(m.__dict__) for m in config.models]
    raw["embeddings"] = [dict(e.__dict__) for e in config.embeddings]
    return raw


def run_experiment(config: ExperimentConfig, out_dir, jobs: int = 1) -> ExperimentReport:
    """Run the full grid, persist every trial artifact, assemble the report.

    With jobs > 1 the independent trials run in worker processes; results are
    merged in config order so reports stay deterministic either way.
    """
    axes = [(spec, emb, lr)
            for spec in config.models
            for emb in config.embeddings
            for lr in config.lr_grid]
    os.makedirs(out_dir, exist_ok=True)

    results: dict[str, TrialResult] = {}
    if jobs > 1:
        raw = _config_dict(config)
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_trial_worker, raw, spec, emb, lr)
                       for spec, emb, lr in axes]
            outcomes = [f.result() for f in futures]
    else:
        outcomes = [run_trial(config, spec, emb, lr) for spec, emb, lr in axes]

    for (spec, emb, lr), (result, model) in zip(axes, outcomes):
        tid = trial_id(spec.name, emb.name, lr)
        trial_dir = os.path.join(out_dir, "trials", tid)
        os.makedirs(trial_dir, exist_ok=True)
        result.artifact = os.path.join("trials", tid)
        with open(os.path.join(trial_dir, "result.json"), "w", encoding="utf-8") as fh:
            json.dump(result.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")
        if config.save_models:
            save_model(model, os.path.join(trial_dir, "model"),
                       extra_meta={"trial": tid, "lr": lr, "embedding": emb.name})
        results[tid] = result

    report = _assemble_report(config, results)
    emit_report(report, os.path.join(out_dir, "report.tsv"), "tsv")
    emit_report(report, os.path.join(out_dir, "report.txt"), "text-table")
    return report


def _assemble_report(config: ExperimentConfig,
                     results: dict[str, TrialResult]) -> ExperimentReport:
    conventions = (f"ner counting={config.ner_metric_mode}, O excluded; "
                   "tc counts all 7 categories")
    if config.table_shape == "model_x_embedding":
        rows = [m.name for m in config.models]
        cols = [e.name for e in config.embeddings]
        cells, pointers = [], []
        for spec in config.models:
            row_vals, row_ptrs = [], []
            for emb in config.embeddings:
                trials = [results[trial_id(spec.name, emb.name, lr)]
                          for lr in config.lr_grid]
                winner = grid_select(trials)
                row_vals.append(round(winner.best_weighted_f1, 4))
                row_ptrs.append(trial_id(winner.model, winner.embedding, winner.lr))
            cells.append(row_vals)
            pointers.append(row_ptrs)
        return ExperimentReport(config.task, "model", "embedding", rows, cols,
                                cells, pointers, conventions)
    emb = config.embeddings[0]
    rows = [f"{lr:g}" for lr in config.lr_grid]
    cols = [m.name for m in config.models]
    cells, pointers = [], []
    for lr in config.lr_grid:
        row_vals, row_ptrs = [], []
        for spec in config.models:
            tid = trial_id(spec.name, emb.name, lr)
            row_vals.append(round(results[tid].best_weighted_f1, 4))
            row_ptrs.append(tid)
        cells.append(row_vals)
        pointers.append(row_ptrs)
    return ExperimentReport(config.task, "lr", "model", rows, cols,
                            cells, pointers, conventions)


def emit_report(report: ExperimentReport, path, fmt: str = "tsv") -> None:
    """tsv is machine-round-trippable; text-table is aligned for reading."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        write_report_to(report, fh, fmt)


def write_report_to(report: ExperimentReport, fh, fmt: str = "tsv") -> None:
    if fmt not in ("tsv", "text-table"):
        raise ConfigError(f"unknown report format {fmt!r}")
    if True:
        if fmt == "tsv":
            fh.write(f"# task={report.task} rows={report.row_kind} "
                     f"cols={report.col_kind}\n")
            fh.write(f"# conventions: {report.conventions}\n")
            for i, row_label in enumerate(report.row_labels):
                for j, col_label in enumerate(report.col_labels):
                    fh.write(f"# trial\t{row_label}\t{col_label}\t"
                             f"{report.cell_trials[i][j]}\n")
            fh.write(report.row_kind + "\t" + "\t".join(report.col_labels) + "\n")
            for label, row in zip(report.row_labels, report.cells):
                fh.write(label + "\t" + "\t".join(f"{v:.4f}" for v in row) + "\n")
            return
        widths = [max(len(report.row_kind), *(len(r) for r in report.row_labels))]
        widths += [max(len(c), 6) for c in report.col_labels]
        header = [report.row_kind.ljust(widths[0])] + [
            c.rjust(widths[j + 1]) for j, c in enumerate(report.col_labels)]
        lines = [f"task={report.task}  ({report.conventions})",
                 "  ".join(header),
                 "  ".join("-" * w for w in widths)]
        for label, row in zip(report.row_labels, report.cells):
            cells = [label.ljust(widths[0])] + [
                f"{v:.4f}".rjust(widths[j + 1]) for j, v in enumerate(row)]
            lines.append("  ".join(cells))
        fh.write("\n".join(lines) + "\n")


def parse_report(path) -> ExperimentReport:
    """Inverse of emit_report's tsv format."""
    task = row_kind = col_kind = None
    conventions = ""
    pointers: dict[tuple[str, str], str] = {}
    header: list[str] | None = None
    row_labels: list[str] = []
    cells: list[list[float]] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("# trial\t"):
                _, row_label, col_label, tid = line.split("\t")
                pointers[(row_label, col_label)] = tid
                continue
            if line.startswith("# task="):
                parts = dict(p.split("=", 1) for p in line[2:].split(" "))
                task, row_kind, col_kind = parts["task"], parts["rows"], parts["cols"]
                continue
            if line.startswith("# conventions: "):
                conventions = line[len("# conventions: "):]
                continue
            if line.startswith("#") or not line:
                continue
            fields = line.split("\t")
            if header is None:
                header = fields[1:]
                continue
            row_labels.append(fields[0])
            cells.append([float(v) for v in fields[1:]])
    if task is None or header is None:
        raise DataError(f"{path}: not a report tsv")
    cell_trials = [[pointers[(r, c)] for c in header] for r in row_labels]
    return ExperimentReport(task, row_kind, col_kind, row_labels, header,
                            cells, cell_trials, conventions)


# ---------------------------------------------------------------------------
# the four experiment templates
# ---------------------------------------------------------------------------

TRADITIONAL_TC_MODELS = ("text_cnn", "text_rnn", "text_rnn_att", "text_rcnn",
                         "dpcnn", "transformer_cls")
TRADITIONAL_NER_MODELS = ("lstm", "bilstm", "bilstm_crf", "bilstm_cnn_crf")


def template_config(
    name: str,
    dataset: str,
    seed: int = 0,
    desk: bool = True,
    embeddings: list[EmbeddingSpec] | None = None,
    checkpoints: list[tuple[str, str]] | None = None,  # (name, ckpt dir)
    vocab: str | None = None,
    **overrides,
) -> ExperimentConfig:
    """The four protocol templates.

    exp1  tc, six traditional models x embedding sources,
          lr grid {1e-3, 5e-4, 2.5e-4, 1e-4}, 100 epochs, padding 64
    exp2  ner, four traditional models x embedding sources,
          lr grid {0.015, 0.01, 0.005, 0.001}, 1000 epochs, batch 20
    exp3  tc, fine-tuned encoder checkpoints, lr grid {1e-5,3e-5,5e-5,7e-5},
          100 epochs, padding 64
    exp4  ner, fine-tuned encoder checkpoints, same lr grid, 30 epochs, batch 16

    `desk=True` divides the epoch counts by 10 (minimum 1) for desk-scale
    runs; pass desk=False for the full protocol values.
    """
    if name not in ("exp1", "exp2", "exp3", "exp4"):
        raise ConfigError(f"unknown experiment template {name!r}")
    if embeddings is None:
        embeddings = [EmbeddingSpec("random")]
    if name in ("exp3", "exp4"):
        if not checkpoints:
            raise ConfigError(f"template {name} needs encoder checkpoints")
        kind = "encoder_ft" if name == "exp3" else "encoder_token_ft"
        models = [ModelSpec(n, kind, checkpoint=path) for n, path in checkpoints]
        embeddings = [EmbeddingSpec("checkpoint")]
    base = {
        "exp1": dict(task="tc", epochs=100, batch_size=16,
                     lr_grid=[0.001, 0.0005, 0.00025, 0.0001],
                     models=[ModelSpec(k, k) for k in TRADITIONAL_TC_MODELS],
                     table_shape="model_x_embedding"),
        "exp2": dict(task="ner", epochs=1000, batch_size=20,
                     lr_grid=[0.015, 0.01, 0.005, 0.001],
                     models=[ModelSpec(k, k) for k in TRADITIONAL_NER_MODELS],
                     table_shape="model_x_embedding"),
        "exp3": dict(task="tc", epochs=100, batch_size=16,
                     lr_grid=[1e-5, 3e-5, 5e-5, 7e-5],
                     models=None, table_shape="lr_x_model"),
        "exp4": dict(task="ner", epochs=30, batch_size=16,
                     lr_grid=[1e-5, 3e-5, 5e-5, 7e-5],
                     models=None, table_shape="lr_x_model"),
    }[name]
    if base["models"] is None:
        base["models"] = models
    if desk:
        base["epochs"] = max(1, base["epochs"] // 10)
    base.update(dataset=dataset, seed=seed, embeddings=embeddings, vocab=vocab)
    base.update(overrides)
    return ExperimentConfig(**base)
