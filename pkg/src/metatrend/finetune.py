"""Walk-forward fine-tuning and prediction emission.

Windows slide one calendar month at a time: train on the trailing twelve
months, predict the following month. Individual mode keeps one task-learner
per stock; universal mode fine-tunes a single learner on the union of every
stock's window. Task-learners persist across windows by default (cumulative
fine-tuning); ``reset_per_window`` restores the re-copy reading.
"""

import logging
from dataclasses import dataclass
from datetime import date
from pathlib import Path

import numpy as np

from metatrend.errors import DatasetError
from metatrend.ioutil import read_csv, write_csv
from metatrend.labeling import TrendLabel
from metatrend.meta import TrainConfig, _rng
from metatrend.nn.layers import softmax
from metatrend.nn.network import Batch, ModelParams, Network, build_network, clone_params
from metatrend.nn.optim import AdamState, adam_step, cosine_lr
from metatrend.tensor import LabeledDataset, concat_datasets
from metatrend.timeutil import DateRange, month_index, month_range, month_start, months_between

logger = logging.getLogger(__name__)

MODES = ("ind", "uni", "meta-ind", "meta-uni")

_STREAM_FINETUNE = 3


@dataclass(frozen=True)
class WindowSplit:
    """Twelve training months immediately followed by one test month."""

    index: int
    train_range: DateRange
    test_range: DateRange

    def __post_init__(self):
        if self.train_range.end != self.test_range.start:
            raise ValueError("test month must immediately follow the train range")


def sliding_windows(start: date, end: date) -> list[WindowSplit]:
    """Every month of [start, end] becomes a test month once twelve training
    months precede it inside the range."""
    n_months = months_between(start, end)
    if n_months < 13:
        raise ValueError(
            f"range {start}..{end} spans {n_months} months; at least 13 required"
        )
    first = month_index(start)
    splits = []
    for offset in range(12, n_months):
        t = first + offset
        splits.append(
            WindowSplit(
                index=offset - 12,
                train_range=DateRange(month_start(t - 12), month_start(t)),
                test_range=month_range(t),
            )
        )
    return splits


@dataclass(frozen=True)
class PredictionRecord:
    stock_id: str
    date: date
    predicted: TrendLabel
    actual: TrendLabel
    probabilities: tuple[float, float, float, float]


def predict(net: Network, theta: ModelParams, dataset: LabeledDataset,
            chunk: int = 256) -> list[PredictionRecord]:
    """Eval-mode predictions, one record per example; ties break to the
    lowest ordinal (argmax of the probability vector)."""
    if dataset.is_empty:
        raise DatasetError(f"{dataset.stock_id}: nothing to predict")
    records = []
    for start in range(0, len(dataset), chunk):
        idx = slice(start, min(start + chunk, len(dataset)))
        logits = net.forward(theta, dataset.tensors[idx], mode="eval")
        probs = softmax(logits)
        preds = probs.argmax(axis=1)
        for row, i in enumerate(range(idx.start, idx.stop)):
            records.append(
                PredictionRecord(
                    stock_id=dataset.stock_id,
                    date=dataset.target_dates[i],
                    predicted=TrendLabel(int(preds[row])),
                    actual=TrendLabel(int(dataset.labels[i])),
                    probabilities=tuple(float(p) for p in probs[row]),
                )
            )
    return records


def _finetune_window(net: Network, theta: ModelParams, window_data: LabeledDataset,
                     cfg: TrainConfig, seed: int, window_index: int) -> None:
    """50 epochs of Adam on one window's training set, cosine-annealed.

    The optimizer and schedule restart each window; the rng stream depends
    only on (seed, window, epoch) so individual and universal runs batch
    identically when their data coincide.
    """
    optimizer = AdamState()
    for epoch in range(cfg.finetune_epochs):
        lr = cosine_lr(epoch, cfg.finetune_epochs, cfg.gamma)
        rng = _rng(seed, _STREAM_FINETUNE, window_index, epoch)
        order = rng.permutation(len(window_data))
        for start in range(0, len(order), cfg.finetune_batch_size):
            idx = order[start : start + cfg.finetune_batch_size]
            batch = Batch(window_data.tensors[idx], window_data.labels[idx])
            loss, grads = net.loss_and_grads(theta, batch, update_stats=True)
            if not np.isfinite(loss):
                raise DatasetError(
                    f"{window_data.stock_id}: non-finite loss in window {window_index}"
                )
            adam_step(theta, grads, optimizer, lr)


def finetune_individual(init: ModelParams, splits: list[WindowSplit],
                        dataset: LabeledDataset, cfg: TrainConfig,
                        seed: int) -> list[PredictionRecord]:
    """Algorithm 2: one task-learner for one stock, carried across windows."""
    net = build_network(init.arch, init.scale)
    theta = clone_params(init)
    records: list[PredictionRecord] = []
    for split in splits:
        train_data = dataset.slice_range(split.train_range)
        test_data = dataset.slice_range(split.test_range)
        if train_data.is_empty:
            logger.warning(
                "%s: no training examples in %s, window skipped",
                dataset.stock_id, split.train_range,
            )
            continue
        if cfg.reset_per_window:
            theta = clone_params(init)
        _finetune_window(net, theta, train_data, cfg, seed, split.index)
        if test_data.is_empty:
            logger.warning(
                "%s: no test examples in %s", dataset.stock_id, split.test_range
            )
            continue
        records.extend(predict(net, theta, test_data))
    return records


def finetune_universal(init: ModelParams, splits: list[WindowSplit],
                       datasets: dict[str, LabeledDataset], cfg: TrainConfig,
                       seed: int) -> list[PredictionRecord]:
    """Algorithm 3: a single task-learner fine-tuned on every stock's window."""
    net = build_network(init.arch, init.scale)
    theta = clone_params(init)
    stock_ids = sorted(datasets)
    records: list[PredictionRecord] = []
    for split in splits:
        parts = []
        for sid in stock_ids:
            sliced = datasets[sid].slice_range(split.train_range)
            if not sliced.is_empty:
                parts.append(sliced)
        if not parts:
            logger.warning("no stock has training data in %s, window skipped",
                           split.train_range)
            continue
        union = parts[0] if len(parts) == 1 else concat_datasets(parts)
        if cfg.reset_per_window:
            theta = clone_params(init)
        _finetune_window(net, theta, union, cfg, seed, split.index)
        for sid in stock_ids:
            test_data = datasets[sid].slice_range(split.test_range)
            if test_data.is_empty:
                continue
            records.extend(predict(net, theta, test_data))
    return records


PREDICTIONS_HEADER = ["stock_id", "date", "predicted", "actual", "p0", "p1", "p2", "p3"]


def write_predictions_csv(records: list[PredictionRecord], path: str | Path,
                          config_hash: str | None = None) -> None:
    rows = [
        (
            r.stock_id,
            r.date.isoformat(),
            r.predicted.csv_name,
            r.actual.csv_name,
            # shortest round-trip formatting keeps argmax(p) == predicted
            # exact across the file boundary
            *(repr(p) for p in r.probabilities),
        )
        for r in records
    ]
    write_csv(Path(path), PREDICTIONS_HEADER, rows, config_hash=config_hash)


def read_predictions_csv(path: str | Path,
                         expect_hash: str | None = None) -> list[PredictionRecord]:
    header, rows, _ = read_csv(Path(path), expect_hash=expect_hash, producer="finetune")
    if header != PREDICTIONS_HEADER:
        raise DatasetError(f"{path}: unexpected header {header!r}")
    records = []
    for row in rows:
        records.append(
            PredictionRecord(
                stock_id=row[0],
                date=date.fromisoformat(row[1]),
                predicted=TrendLabel.from_csv_name(row[2]),
                actual=TrendLabel.from_csv_name(row[3]),
                probabilities=tuple(float(p) for p in row[4:8]),
            )
        )
    return records
