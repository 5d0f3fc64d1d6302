"""Deterministic mini-batch training loop, epoch records and loss/accuracy curves."""
import csv
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ltcnn.checkpoint import Checkpoint, CheckpointMetadata, to_checkpoint
from ltcnn.data import LabeledDataset, batch_iterator, check_classes
from ltcnn.errors import DivergenceError
from ltcnn.layers import TRAIN, softmax_cross_entropy
from ltcnn.logs import get_logger
from ltcnn.metrics import collect_logits, predict_labels
from ltcnn.network import Network
from ltcnn.optim import Optimizer, clip_by_global_norm, make_optimizer, step_decay
from ltcnn.tensor import Rng, Tensor, check_finite, make_rng

CURVE_HEADER = ("epoch", "train_loss", "train_acc", "val_loss", "val_acc")

log = get_logger(__name__)


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    epochs: int = Field(ge=1)
    batch_size: int = Field(32, ge=1)
    learning_rate: float = Field(1e-3, gt=0)
    optimizer: Literal["adam", "sgd-momentum"] = "adam"
    momentum: float = Field(0.9, ge=0, lt=1)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    adam_eps: float = Field(1e-8, gt=0)
    seed: int = Field(0, ge=0)
    eval_every: int = Field(1, ge=1)
    lr_decay_every: Optional[int] = Field(None, ge=1)
    lr_decay_factor: float = Field(0.1, gt=0)
    clip_norm: Optional[float] = Field(None, gt=0)


class EpochRecord(BaseModel):
    epoch: int
    train_loss: float
    train_accuracy: float
    val_loss: Optional[float] = None
    val_accuracy: Optional[float] = None


@dataclass
class TrainResult:
    final: Checkpoint
    best: Checkpoint
    records: List[EpochRecord]
    elapsed_seconds: float = 0.0


ProgressCallback = Callable[[EpochRecord, int], None]


def format_progress(record: EpochRecord, total_epochs: int) -> str:
    line = f"epoch {record.epoch}/{total_epochs} train_loss={record.train_loss:.4f} train_acc={record.train_accuracy:.4f}"
    if record.val_loss is not None:
        line += f" val_loss={record.val_loss:.4f} val_acc={record.val_accuracy:.4f}"
    return line


def train_step(net: Network, x: Tensor, labels: np.ndarray, optimizer: Optimizer, rng: Rng,
               clip_norm: Optional[float] = None) -> Tuple[float, int]:
    """One forward/backward/update on a batch. Returns (mean loss, correct predictions).

    The loss is checked before the update, so a non-finite value leaves the
    parameters untouched.
    """
    logits, contexts = net.forward(x, TRAIN, rng)
    loss, grad, _ = softmax_cross_entropy(logits, labels)
    check_finite(np.asarray(loss), "loss")
    _, grads = net.backward(grad, contexts)
    if clip_norm is not None:
        grads = clip_by_global_norm(grads, clip_norm)
    optimizer.step(grads)
    return loss, int(np.sum(predict_labels(logits) == labels))


def validation_pass(net: Network, ds: LabeledDataset, batch_size: int,
                    workers: Optional[int] = None) -> Tuple[float, float]:
    logits, labels = collect_logits(net, ds, batch_size, workers)
    loss, _, _ = softmax_cross_entropy(logits, labels)
    return loss, float(np.mean(predict_labels(logits) == labels))


def train(net: Network, train_ds: LabeledDataset, val_ds: Optional[LabeledDataset], cfg: TrainConfig,
          progress: Optional[ProgressCallback] = None, workers: Optional[int] = None) -> TrainResult:
    """Train `net` in place and return the final and best-validation checkpoints.

    Shuffling and dropout draw from separate named streams of `cfg.seed`, so a
    run is a pure function of (seed, config, data). The best checkpoint is the
    epoch with the highest validation accuracy, earliest on ties; without
    validation data it is the final one.
    """
    check_classes(train_ds, net.spec)
    if val_ds is not None:
        check_classes(val_ds, net.spec)
    if len(train_ds) == 0:
        raise ValueError("training set is empty")

    started = time.perf_counter()

    shuffle_rng = make_rng(cfg.seed, "shuffle")
    dropout_rng = make_rng(cfg.seed, "dropout")
    optimizer = make_optimizer(cfg.optimizer, net.named_parameters(), cfg.learning_rate,
                               momentum=cfg.momentum, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps)

    records: List[EpochRecord] = []
    best: Optional[Checkpoint] = None
    best_epoch: Optional[int] = None
    best_acc: Optional[float] = None

    for epoch in range(1, cfg.epochs + 1):
        optimizer.lr = step_decay(cfg.learning_rate, epoch, cfg.lr_decay_every, cfg.lr_decay_factor)
        loss_sum, correct, seen = 0.0, 0, 0
        batches = batch_iterator(train_ds, cfg.batch_size, shuffle_rng, True, net.spec, workers)
        for batch, (x, labels) in enumerate(batches, start=1):
            try:
                loss, hits = train_step(net, x, labels, optimizer, dropout_rng, cfg.clip_norm)
            except FloatingPointError:
                log.error("divergence", epoch=epoch, batch=batch)
                raise DivergenceError(epoch, batch) from None
            loss_sum += loss * len(labels)
            correct += hits
            seen += len(labels)

        record = EpochRecord(epoch=epoch, train_loss=loss_sum / seen, train_accuracy=correct / seen)
        if val_ds is not None and len(val_ds) and (epoch % cfg.eval_every == 0 or epoch == cfg.epochs):
            record.val_loss, record.val_accuracy = validation_pass(net, val_ds, cfg.batch_size, workers)
            if best_acc is None or record.val_accuracy > best_acc:
                best_acc, best_epoch = record.val_accuracy, epoch
                best = to_checkpoint(net, CheckpointMetadata(seed=cfg.seed, epochs_trained=epoch,
                                                             best_epoch=epoch, best_val_accuracy=best_acc))
        records.append(record)
        log.info("epoch_finished", **record.model_dump())
        if progress is not None:
            progress(record, cfg.epochs)

    final = to_checkpoint(net, CheckpointMetadata(seed=cfg.seed, epochs_trained=cfg.epochs,
                                                  best_epoch=best_epoch, best_val_accuracy=best_acc))
    # wall-clock only; never written into curves or checkpoints
    elapsed = time.perf_counter() - started
    log.info("train_finished", epochs=cfg.epochs, elapsed_seconds=round(elapsed, 3), best_epoch=best_epoch)
    return TrainResult(final=final, best=best or final, records=records, elapsed_seconds=elapsed)


def _fmt(value: Optional[float]) -> str:
    return "" if value is None else f"{value:.6g}"


def emit_curves(records: List[EpochRecord], path: Union[str, Path]) -> None:
    """One CSV row per epoch; validation columns stay empty when no validation ran."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CURVE_HEADER)
        for r in records:
            writer.writerow([r.epoch, _fmt(r.train_loss), _fmt(r.train_accuracy), _fmt(r.val_loss), _fmt(r.val_accuracy)])


def read_curves(path: Union[str, Path]) -> List[EpochRecord]:
    def value(text: str) -> Optional[float]:
        return float(text) if text else None

    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if tuple(header or ()) != CURVE_HEADER:
            raise ValueError(f"'{path}' is not a curves file: header {header}")
        return [
            EpochRecord(epoch=int(row[0]), train_loss=float(row[1]), train_accuracy=float(row[2]),
                        val_loss=value(row[3]), val_accuracy=value(row[4]))
            for row in reader
        ]
