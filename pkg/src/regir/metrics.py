"""Per-label precision/recall/F1 and the weighted-F1 summary.

For each label i the counts are
    N_correct  — elements the model labeled i that match a true element,
    N_labeled  — elements the model labeled i,
    N_true     — true elements of label i,
with P = N_correct/N_labeled, R = N_correct/N_true, F1 = 2PR/(P+R), and the
overall score (sum_i n_i * F1_i) / sum_i n_i where n_i = N_true.

Classification counts one element per example.  Sequence labeling counts
elements either as exact-match spans (label and both boundaries must agree;
the default) or as individually tagged tokens (`mode="token"`).  The O tag
is never a counted label; zero denominators yield 0 by convention.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import DataError
from .labels import NER_LABELS, NER_TAGS, TC_CATEGORIES


@dataclass(frozen=True)
class LabelMetrics:
    label: str
    n_correct: int
    n_labeled: int
    n_true: int
    precision: float
    recall: float
    f1: float

    @property
    def n_i(self) -> int:
        return self.n_true


@dataclass
class MetricsReport:
    task: str
    per_label: list[LabelMetrics]
    weighted_f1: float
    span_mode: str = "span"

    @property
    def totals(self) -> tuple[int, int, int]:
        return (
            sum(m.n_i for m in self.per_label),
            sum(m.n_labeled for m in self.per_label),
            sum(m.n_correct for m in self.per_label),
        )


def prf(n_correct: int, n_labeled: int, n_true: int) -> tuple[float, float, float]:
    """Precision, recall, F1 from raw counts (0 on zero denominators)."""
    if n_correct < 0 or n_labeled < 0 or n_true < 0:
        raise DataError("metric counts must be nonnegative")
    if n_correct > min(n_labeled, n_true):
        raise DataError(
            f"N_correct={n_correct} exceeds min(N_labeled={n_labeled}, N_true={n_true})"
        )
    p = n_correct / n_labeled if n_labeled else 0.0
    r = n_correct / n_true if n_true else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f1


def weighted_f1(per_label: list[LabelMetrics]) -> float:
    total = sum(m.n_i for m in per_label)
    if total == 0:
        raise DataError("weighted F1 undefined: all n_i are zero")
    return sum(m.n_i * m.f1 for m in per_label) / total


def extract_spans(tags: list[str]) -> set[tuple[str, int, int]]:
    """Maximal B-x (I-x)* runs as (label, start, end-exclusive) spans.

    A stray I-x (no preceding B-x/I-x of the same label) is read as B-x.
    """
    spans: set[tuple[str, int, int]] = set()
    start = None
    label = None
    for i, tag in enumerate(tags):
        if tag not in NER_TAGS:
            raise DataError(f"invalid tag {tag!r}")
        if tag == "O":
            if label is not None:
                spans.add((label, start, i))
                label = None
            continue
        prefix, tag_label = tag.split("-", 1)
        if prefix == "B" or tag_label != label:
            if label is not None:
                spans.add((label, start, i))
            start, label = i, tag_label
    if label is not None:
        spans.add((label, start, len(tags)))
    return spans


def _counts_to_metrics(labels, correct, labeled, true) -> list[LabelMetrics]:
    out = []
    for lab in labels:
        p, r, f1 = prf(correct[lab], labeled[lab], true[lab])
        out.append(LabelMetrics(lab, correct[lab], labeled[lab], true[lab], p, r, f1))
    return out


def evaluate_tc(predictions: list[str], gold: list[str]) -> MetricsReport:
    if len(predictions) != len(gold):
        raise DataError(f"prediction/gold size mismatch: {len(predictions)} vs {len(gold)}")
    correct = {c: 0 for c in TC_CATEGORIES}
    labeled = {c: 0 for c in TC_CATEGORIES}
    true = {c: 0 for c in TC_CATEGORIES}
    for p, g in zip(predictions, gold):
        if p not in labeled or g not in true:
            raise DataError(f"unknown category in pair ({p!r}, {g!r})")
        labeled[p] += 1
        true[g] += 1
        if p == g:
            correct[p] += 1
    per_label = _counts_to_metrics(TC_CATEGORIES, correct, labeled, true)
    return MetricsReport("tc", per_label, weighted_f1(per_label), span_mode="n/a")


def evaluate_ner(
    predictions: list[list[str]],
    gold: list[list[str]],
    mode: str = "span",
) -> MetricsReport:
    """Exact-match span comparison ("span") or per-token comparison ("token")."""
    if len(predictions) != len(gold):
        raise DataError(f"prediction/gold size mismatch: {len(predictions)} vs {len(gold)}")
    if mode not in ("span", "token"):
        raise DataError(f"unknown NER counting mode {mode!r}")
    correct = {c: 0 for c in NER_LABELS}
    labeled = {c: 0 for c in NER_LABELS}
    true = {c: 0 for c in NER_LABELS}
    for pred_tags, gold_tags in zip(predictions, gold):
        if len(pred_tags) != len(gold_tags):
            raise DataError(
                f"sequence length mismatch: {len(pred_tags)} vs {len(gold_tags)}"
            )
        if mode == "span":
            pred_spans = extract_spans(list(pred_tags))
            gold_spans = extract_spans(list(gold_tags))
            for lab, s, e in pred_spans:
                labeled[lab] += 1
                if (lab, s, e) in gold_spans:
                    correct[lab] += 1
            for lab, _, _ in gold_spans:
                true[lab] += 1
        else:
            for p, g in zip(pred_tags, gold_tags):
                if p != "O":
                    lab = p.split("-", 1)[1]
                    labeled[lab] += 1
                    if p == g:
                        correct[lab] += 1
                if g != "O":
                    true[g.split("-", 1)[1]] += 1
    per_label = _counts_to_metrics(NER_LABELS, correct, labeled, true)
    return MetricsReport("ner", per_label, weighted_f1(per_label), span_mode=mode)


def evaluate(predictions, gold, task: str, mode: str = "span") -> MetricsReport:
    if task == "tc":
        return evaluate_tc(predictions, gold)
    if task == "ner":
        return evaluate_ner(predictions, gold, mode=mode)
    raise DataError(f"unknown task {task!r}")


def write_report(report: MetricsReport, path) -> None:
    """TSV: one row per label plus a WEIGHTED row, 4-decimal values."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# task={report.task} counting={report.span_mode}"
                 " (ner: O excluded, exact span boundaries unless counting=token)\n")
        fh.write("label\tN_correct\tN_labeled\tN_true\tP\tR\tF1\tn_i\n")
        for m in report.per_label:
            fh.write(
                f"{m.label}\t{m.n_correct}\t{m.n_labeled}\t{m.n_true}"
                f"\t{m.precision:.4f}\t{m.recall:.4f}\t{m.f1:.4f}\t{m.n_i}\n"
            )
        n_i, n_labeled, n_correct = report.totals
        fh.write(
            f"WEIGHTED\t{n_correct}\t{n_labeled}\t{n_i}"
            f"\t\t\t{report.weighted_f1:.4f}\t{n_i}\n"
        )
