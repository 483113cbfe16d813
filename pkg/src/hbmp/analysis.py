"""Evaluation metrics and error-analysis artifacts.

Covers accuracy, per-label precision/recall/F1, confusion matrices,
percentile-bootstrap confidence intervals over resampled accuracies,
and per-linguistic-tag accuracy breakdowns for annotated corpora.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import data as data_mod
from .tensor import log_softmax


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # [C, C] ints; rows = gold, cols = predicted
    labels: tuple

    @classmethod
    def from_predictions(cls, gold, predicted, labels):
        c = len(labels)
        counts = np.zeros((c, c), dtype=np.int64)
        np.add.at(counts, (np.asarray(gold), np.asarray(predicted)), 1)
        return cls(counts, tuple(labels))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts)) / self.total


def f1_score(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def per_label_metrics(confusion: ConfusionMatrix) -> dict:
    """label -> (precision, recall, f1), all in [0, 1]."""
    counts = confusion.counts
    out = {}
    for i, label in enumerate(confusion.labels):
        col = counts[:, i].sum()
        row = counts[i, :].sum()
        precision = counts[i, i] / col if col else 0.0
        recall = counts[i, i] / row if row else 0.0
        out[label] = (precision, recall, f1_score(precision, recall))
    return out


@dataclass
class EvalReport:
    accuracy: float
    confusion: ConfusionMatrix
    per_label: dict  # label -> (precision, recall, f1)
    ci: tuple | None = None
    category_table: dict | None = None
    per_example_correct: np.ndarray | None = None
    predictions: np.ndarray | None = None
    gold: np.ndarray | None = None

    def format_text(self) -> str:
        lines = [f"accuracy: {100 * self.accuracy:.2f}%"]
        if self.ci is not None:
            lines.append(f"bootstrap 95% CI: [{100 * self.ci[0]:.1f}%, {100 * self.ci[1]:.1f}%]")
        lines.append("")
        lines.append(f"{'label':<16}{'precision':>10}{'recall':>10}{'F1':>10}")
        for label, (p, r, f1) in self.per_label.items():
            lines.append(f"{label:<16}{100 * p:>9.1f}%{100 * r:>9.1f}%{100 * f1:>10.1f}")
        lines.append("")
        lines.append("confusion (rows gold, cols predicted):")
        header = " " * 16 + "".join(f"{l:>14}" for l in self.confusion.labels)
        lines.append(header)
        for i, label in enumerate(self.confusion.labels):
            lines.append(f"{label:<16}" + "".join(f"{n:>14d}" for n in self.confusion.counts[i]))
        return "\n".join(lines) + "\n"

    def format_kv(self) -> str:
        """Machine-readable key=value lines, full precision."""
        pairs = [("accuracy", repr(self.accuracy))]
        if self.ci is not None:
            pairs += [("ci_lo", repr(self.ci[0])), ("ci_hi", repr(self.ci[1]))]
        for label, (p, r, f1) in self.per_label.items():
            pairs += [
                (f"precision.{label}", repr(p)),
                (f"recall.{label}", repr(r)),
                (f"f1.{label}", repr(f1)),
            ]
        for i, gl in enumerate(self.confusion.labels):
            for j, pl in enumerate(self.confusion.labels):
                pairs.append((f"confusion.{gl}.{pl}", str(self.confusion.counts[i, j])))
        return "\n".join(f"{k}={v}" for k, v in pairs) + "\n"


def report_from_confusion(confusion: ConfusionMatrix) -> EvalReport:
    return EvalReport(confusion.accuracy, confusion, per_label_metrics(confusion))


def predict_dataset(model, dataset, vocab, batch_size: int = 64):
    """(gold, predicted, per-example mean-loss) arrays, in corpus order."""
    gold, pred, losses = [], [], []
    for prem, hyp, labels in data_mod.batch_iter(dataset, vocab, batch_size):
        logits = model.forward(prem, hyp).data
        logp = log_softmax(logits)
        gold.append(labels)
        pred.append(logits.argmax(axis=1))
        losses.append(-logp[np.arange(len(labels)), labels])
    return np.concatenate(gold), np.concatenate(pred), np.concatenate(losses)


def evaluate(model, dataset, vocab, batch_size: int = 64) -> EvalReport:
    if tuple(dataset.label_set) != tuple(model.config.labels):
        raise ValueError(
            f"label-set mismatch: dataset {dataset.label_set} vs model {model.config.labels}"
        )
    gold, pred, _ = predict_dataset(model, dataset, vocab, batch_size)
    confusion = ConfusionMatrix.from_predictions(gold, pred, dataset.label_set)
    report = report_from_confusion(confusion)
    report.per_example_correct = gold == pred
    report.predictions = pred
    report.gold = gold
    return report


def bootstrap_ci(
    per_example_correct,
    samples: int = 1000,
    sample_size: int = 1000,
    level: float = 0.95,
    seed: int = 0,
) -> tuple:
    """Percentile bootstrap interval over resampled accuracies."""
    correct = np.asarray(per_example_correct, dtype=np.float64)
    if correct.size == 0:
        raise ValueError("empty correctness vector")
    if sample_size < 1:
        raise ValueError(f"sample_size must be >= 1, got {sample_size}")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, correct.size, size=(samples, sample_size))
    stats = correct[idx].mean(axis=1)
    tail = 100.0 * (1.0 - level) / 2.0
    return float(np.percentile(stats, tail)), float(np.percentile(stats, 100.0 - tail))


def breakdown_from_correct(examples, per_example_correct, label_set) -> dict:
    """Accuracy per (annotation tag, gold label).

    Multi-tag examples count once under every tag they carry. Cells
    with no examples are absent from the inner dicts. The two "total"
    rows aggregate micro (pooled over tagged instances) and macro
    (unweighted mean over non-empty cells) per gold label.
    """
    cells = {}
    for ex, ok in zip(examples, per_example_correct):
        for tag in ex.tags:
            cell = cells.setdefault(tag, {}).setdefault(ex.label, [0, 0])
            cell[0] += int(ok)
            cell[1] += 1
    table = {
        tag: {label: (c[0] / c[1], c[1]) for label, c in by_label.items()}
        for tag, by_label in sorted(cells.items())
    }
    micro, macro = {}, {}
    for label in label_set:
        hits = sum(cells[t][label][0] for t in cells if label in cells[t])
        n = sum(cells[t][label][1] for t in cells if label in cells[t])
        accs = [table[t][label][0] for t in table if label in table[t]]
        if n:
            micro[label] = (hits / n, n)
        if accs:
            macro[label] = (sum(accs) / len(accs), len(accs))
    table["total (micro)"] = micro
    table["total (macro)"] = macro
    return table


def category_breakdown(model, dataset, vocab, batch_size: int = 64) -> dict:
    gold, pred, _ = predict_dataset(model, dataset, vocab, batch_size)
    return breakdown_from_correct(dataset.examples, gold == pred, dataset.label_set)


def format_category_table(table: dict, label_set) -> str:
    """Text table; empty cells render as '-'."""
    lines = [f"{'category':<24}" + "".join(f"{l:>16}" for l in label_set)]
    for tag, by_label in table.items():
        row = f"{tag:<24}"
        for label in label_set:
            if label in by_label:
                acc, n = by_label[label]
                row += f"{100 * acc:>10.1f} ({n:>3d})"
            else:
                row += f"{'-':>16}"
        lines.append(row)
    return "\n".join(lines) + "\n"


def predictions_tsv(gold, predicted, label_set) -> str:
    """index, gold, predicted - for external scoring."""
    lines = ["index\tgold\tpredicted"]
    for i, (g, p) in enumerate(zip(gold, predicted)):
        lines.append(f"{i}\t{label_set[g]}\t{label_set[p]}")
    return "\n".join(lines) + "\n"
