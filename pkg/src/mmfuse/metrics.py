"""Accuracy, per-class precision/recall/F1, macro-F1, and the metrics
report with its text and JSON renderings."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ShapeError


def confusion_matrix(labels, predictions, n_classes: int) -> np.ndarray:
    """Counts[true][predicted], accumulated in sample index order."""
    matrix = np.zeros((n_classes, n_classes), dtype=np.int64)
    for true, pred in zip(labels, predictions):
        matrix[int(true), int(pred)] += 1
    return matrix


def per_class_prf(confusion: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Precision, recall, F1 per class; zero where a denominator is zero."""
    confusion = np.asarray(confusion)
    if confusion.ndim != 2 or confusion.shape[0] != confusion.shape[1] or confusion.shape[0] == 0:
        raise ShapeError(f"confusion matrix must be square and non-empty, got shape {confusion.shape}")
    tp = np.diag(confusion).astype(np.float64)
    predicted = confusion.sum(axis=0).astype(np.float64)
    actual = confusion.sum(axis=1).astype(np.float64)
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
    recall = np.divide(tp, actual, out=np.zeros_like(tp), where=actual > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    return precision, recall, f1


def macro_f1(confusion: np.ndarray) -> float:
    """Unweighted mean F1 over classes present in truth or predictions."""
    confusion = np.asarray(confusion)
    _, _, f1 = per_class_prf(confusion)
    present = (confusion.sum(axis=1) > 0) | (confusion.sum(axis=0) > 0)
    if not present.any():
        raise ValueError("macro_f1: confusion matrix has no samples")
    return float(f1[present].mean())


@dataclass
class MetricsReport:
    """Evaluation metrics, optionally carrying training history curves."""

    accuracy: float
    macro_f1: float
    precision: list[float]
    recall: list[float]
    f1: list[float]
    confusion: list[list[int]]
    n_samples: int
    split: str = ""
    loss_curve: list[float] = field(default_factory=list)
    val_macro_f1_curve: list[float] = field(default_factory=list)
    train_accuracy_curve: list[float] = field(default_factory=list)
    best_epoch: int = -1

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "confusion": self.confusion,
            "n_samples": self.n_samples,
            "split": self.split,
            "loss_curve": self.loss_curve,
            "val_macro_f1_curve": self.val_macro_f1_curve,
            "train_accuracy_curve": self.train_accuracy_curve,
            "best_epoch": self.best_epoch,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "MetricsReport":
        return cls(**payload)


def report_from_confusion(confusion: np.ndarray, split: str = "") -> MetricsReport:
    precision, recall, f1 = per_class_prf(confusion)
    total = int(confusion.sum())
    accuracy = float(np.trace(confusion) / total) if total else 0.0
    return MetricsReport(
        accuracy=accuracy,
        macro_f1=macro_f1(confusion),
        precision=[float(x) for x in precision],
        recall=[float(x) for x in recall],
        f1=[float(x) for x in f1],
        confusion=[[int(x) for x in row] for row in confusion],
        n_samples=total,
        split=split,
    )


def save_report(path, report: MetricsReport) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n")


def load_report(path) -> MetricsReport:
    return MetricsReport.from_dict(json.loads(Path(path).read_text()))


def render_report(report: MetricsReport, per_class: bool = False) -> str:
    """Plain-text table: percentages with two decimals, per-class on request."""
    lines = [
        f"Accuracy  {report.accuracy * 100:.2f}%",
        f"Macro-F1  {report.macro_f1 * 100:.2f}%",
    ]
    if report.split:
        lines.append(f"Split     {report.split} ({report.n_samples} samples)")
    if per_class:
        lines.append("")
        lines.append(f"{'class':>6}  {'precision':>9}  {'recall':>9}  {'f1':>9}")
        for idx, (p, r, f) in enumerate(zip(report.precision, report.recall, report.f1)):
            lines.append(f"{idx:>6}  {p * 100:>8.2f}%  {r * 100:>8.2f}%  {f * 100:>8.2f}%")
    return "\n".join(lines)
