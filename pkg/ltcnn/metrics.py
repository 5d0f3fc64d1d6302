"""Confusion matrices, the per-class classification report and its JSON/CSV artifacts."""
import csv
import json
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, model_validator

from ltcnn.data import LabeledDataset, batch_iterator, check_classes
from ltcnn.errors import DatasetError, ShapeError
from ltcnn.layers import EVAL, softmax
from ltcnn.logs import get_logger
from ltcnn.network import Network
from ltcnn.tensor import Tensor

JSON_DECIMALS = 4
CSV_DECIMALS = 2

log = get_logger(__name__)


class ConfusionMatrix(BaseModel):
    """Rows are true classes, columns predicted classes."""

    class_names: List[str]
    counts: List[List[int]]

    @model_validator(mode="after")
    def _check_grid(self) -> "ConfusionMatrix":
        n = len(self.class_names)
        if len(self.counts) != n or any(len(row) != n for row in self.counts):
            raise ValueError(f"confusion matrix must be {n} x {n}")
        if any(value < 0 for row in self.counts for value in row):
            raise ValueError("confusion counts must be non-negative")
        return self

    def as_array(self) -> np.ndarray:
        return np.array(self.counts, dtype=np.int64).reshape(len(self.class_names), len(self.class_names))

    @property
    def total(self) -> int:
        return int(self.as_array().sum())


class ClassMetrics(BaseModel):
    name: str
    precision: float
    recall: float
    f1: float
    support: int


class AverageMetrics(BaseModel):
    precision: float
    recall: float
    f1: float


class SamplePrediction(BaseModel):
    source: Optional[str] = None
    true: int
    predicted: int
    probability: float


class EvalReport(BaseModel):
    classes: List[ClassMetrics]
    accuracy: float
    macro_avg: AverageMetrics
    weighted_avg: AverageMetrics
    total: int
    confusion: ConfusionMatrix
    warnings: List[str] = []
    samples: List[SamplePrediction] = []


def _safe_ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.zeros(num.shape, dtype=np.float64)
    np.divide(num, den, out=out, where=den != 0)
    return out


def compute_metrics(true_labels: Sequence[int], pred_labels: Sequence[int], n_classes: int,
                    class_names: Optional[Sequence[str]] = None) -> EvalReport:
    """Per-class precision/recall/F1/support, accuracy, macro and support-weighted averages.

    A zero denominator defines the metric as 0 and adds a warning to the report.
    """
    true = np.asarray(true_labels, dtype=np.int64).reshape(-1)
    pred = np.asarray(pred_labels, dtype=np.int64).reshape(-1)
    if true.shape != pred.shape:
        raise ShapeError(f"shape mismatch: {true.size} true labels vs {pred.size} predictions")
    if true.size == 0:
        raise ValueError("no samples to score")
    for what, labels in (("true", true), ("predicted", pred)):
        if labels.min() < 0 or labels.max() >= n_classes:
            raise ValueError(f"{what} label out of range [0, {n_classes}): {labels.min()}..{labels.max()}")
    names = list(class_names) if class_names is not None else [str(c) for c in range(n_classes)]
    if len(names) != n_classes:
        raise ShapeError(f"{len(names)} class names for {n_classes} classes")

    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (true, pred), 1)
    tp = np.diag(counts).astype(np.float64)
    support = counts.sum(axis=1)
    predicted = counts.sum(axis=0)

    precision = _safe_ratio(tp, predicted)
    recall = _safe_ratio(tp, support)
    f1 = _safe_ratio(2 * precision * recall, precision + recall)

    warnings = []
    for c, name in enumerate(names):
        if predicted[c] == 0:
            warnings.append(f"precision undefined for class '{name}' (no predictions); reported as 0")
        if support[c] == 0:
            warnings.append(f"recall undefined for class '{name}' (no samples); reported as 0")
    for message in warnings:
        log.warning("zero_division", detail=message)

    total = int(support.sum())
    weights = support / total
    return EvalReport(
        classes=[
            ClassMetrics(name=names[c], precision=float(precision[c]), recall=float(recall[c]),
                         f1=float(f1[c]), support=int(support[c]))
            for c in range(n_classes)
        ],
        accuracy=float(tp.sum() / total),
        macro_avg=AverageMetrics(precision=float(precision.mean()), recall=float(recall.mean()), f1=float(f1.mean())),
        weighted_avg=AverageMetrics(
            precision=float(np.dot(weights, precision)),
            recall=float(np.dot(weights, recall)),
            f1=float(np.dot(weights, f1)),
        ),
        total=total,
        confusion=ConfusionMatrix(class_names=names, counts=counts.tolist()),
        warnings=warnings,
    )


def collect_logits(net: Network, ds: LabeledDataset, batch_size: int = 32,
                   workers: Optional[int] = None) -> Tuple[Tensor, np.ndarray]:
    """Eval-mode logits for every item in dataset order, with the true labels."""
    logits, labels = [], []
    for x, y in batch_iterator(ds, batch_size, None, False, net.spec, workers):
        out, _ = net.forward(x, EVAL)
        logits.append(out)
        labels.append(y)
    return np.concatenate(logits), np.concatenate(labels)


def predict_labels(logits: Tensor) -> np.ndarray:
    """Argmax per row; ties go to the lowest class index."""
    return np.argmax(logits, axis=1)


def evaluate(net: Network, ds: LabeledDataset, batch_size: int = 32, workers: Optional[int] = None) -> EvalReport:
    check_classes(ds, net.spec)
    if len(ds) == 0:
        raise DatasetError("cannot evaluate an empty dataset")
    logits, labels = collect_logits(net, ds, batch_size, workers)
    probs = softmax(logits.astype(np.float64))
    preds = predict_labels(logits)
    report = compute_metrics(labels, preds, net.spec.n_classes, net.spec.class_names)
    report.samples = [
        SamplePrediction(
            source=str(item.source) if item.source is not None else None,
            true=int(labels[i]),
            predicted=int(preds[i]),
            probability=float(probs[i, preds[i]]),
        )
        for i, item in enumerate(ds.items)
    ]
    log.info("evaluated", items=len(ds), accuracy=report.accuracy)
    return report


def _round_floats(value, decimals: int):
    if isinstance(value, float):
        return round(value, decimals)
    if isinstance(value, dict):
        return {k: _round_floats(v, decimals) for k, v in value.items()}
    if isinstance(value, list):
        return [_round_floats(v, decimals) for v in value]
    return value


def report_to_json(report: EvalReport) -> str:
    return json.dumps(_round_floats(report.model_dump(mode="json"), JSON_DECIMALS), indent=2) + "\n"


def report_rows(report: EvalReport) -> List[List[str]]:
    """Classification-report table: classes, Accuracy, Macro Avg, Weighted Avg."""
    fmt = lambda x: f"{x:.{CSV_DECIMALS}f}"  # noqa: E731
    rows = [["", "precision", "recall", "f1-score", "support"]]
    for c in report.classes:
        rows.append([c.name, fmt(c.precision), fmt(c.recall), fmt(c.f1), str(c.support)])
    rows.append(["Accuracy", "", "", fmt(report.accuracy), str(report.total)])
    for label, avg in (("Macro Avg", report.macro_avg), ("Weighted Avg", report.weighted_avg)):
        rows.append([label, fmt(avg.precision), fmt(avg.recall), fmt(avg.f1), str(report.total)])
    return rows


def _write_csv(rows: List[List[str]], path: Union[str, Path]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        csv.writer(f, lineterminator="\n").writerows(rows)


def write_report(report: EvalReport, path_json: Union[str, Path], path_csv: Union[str, Path]) -> None:
    Path(path_json).write_text(report_to_json(report), encoding="utf-8")
    _write_csv(report_rows(report), path_csv)


def write_confusion(cm: ConfusionMatrix, path: Union[str, Path]) -> None:
    rows = [["true\\pred", *cm.class_names]]
    rows.extend([name, *map(str, row)] for name, row in zip(cm.class_names, cm.counts))
    _write_csv(rows, path)
