"""22-day x 15-feature input tensors and labeled datasets.

Row t of a tensor is day d-21+t (row 21 is the target day d), columns follow
the frozen feature order. The default normalization is a per-tensor,
per-column z-score over the 22 rows; zero-variance columns normalize to
zeros. Datasets persist as a JSON header + raw little-endian float32 blob +
CSV index so they are portable and bit-exact.
"""

import json
import logging
from dataclasses import dataclass
from datetime import date
from pathlib import Path

import numpy as np

from metatrend.errors import DatasetError
from metatrend.indicators import FEATURE_NAMES, FeatureMatrix, feature_checksum
from metatrend.ioutil import atomic_write_bytes, atomic_write_text, write_csv, read_csv
from metatrend.labeling import LabelSequence, TrendLabel
from metatrend.timeutil import DateRange

logger = logging.getLogger(__name__)

WINDOW_DAYS = 22
NORM_POLICIES = ("zscore", "identity", "global")


@dataclass(frozen=True)
class InputTensor:
    """One normalized 22 x 15 window ending at ``target_date``."""

    values: np.ndarray
    stock_id: str
    target_date: date
    normalization: str

    def __post_init__(self):
        if self.values.shape != (WINDOW_DAYS, len(FEATURE_NAMES)):
            raise DatasetError(f"tensor shape {self.values.shape} != (22, 15)")
        if not np.isfinite(self.values).all():
            raise DatasetError(
                f"{self.stock_id} {self.target_date}: non-finite tensor cell"
            )


@dataclass(frozen=True)
class LabeledExample:
    tensor: InputTensor
    label: TrendLabel


def _normalize(window: np.ndarray, norm: str, global_stats=None) -> np.ndarray:
    if norm == "identity":
        return window
    if norm == "zscore":
        mean = window.mean(axis=0, dtype=np.float64)
        std = window.std(axis=0, dtype=np.float64)
    elif norm == "global":
        if global_stats is None:
            raise DatasetError("global normalization requires precomputed stats")
        mean, std = global_stats
    else:
        raise DatasetError(f"unknown normalization {norm!r}")
    # A column whose spread is at floating-point noise level relative to its
    # magnitude is constant; it normalizes to zeros rather than amplified noise.
    scale = np.abs(window).max(axis=0)
    live = std > 1e-10 * scale
    out = np.where(live, (window - mean) / np.where(live, std, 1.0), 0.0)
    return out


def global_stats(fm: FeatureMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Per-feature mean/std over all valid cells, for the ``global`` policy."""
    mean = np.zeros(len(fm.feature_names))
    std = np.zeros(len(fm.feature_names))
    for i in range(len(fm.feature_names)):
        cells = fm.values[i, fm.valid[i]]
        if cells.size:
            mean[i] = cells.mean()
            std[i] = cells.std()
    return mean, std


def window_tensor(fm: FeatureMatrix, d: int, norm: str = "zscore",
                  stats=None) -> InputTensor:
    """Cut the 22-day window ending at calendar index ``d`` and normalize it."""
    if d < WINDOW_DAYS - 1 or d >= len(fm.dates):
        raise DatasetError(
            f"{fm.stock_id}: no {WINDOW_DAYS}-day history at index {d}"
        )
    sl = slice(d - WINDOW_DAYS + 1, d + 1)
    if not fm.valid[:, sl].all():
        raise DatasetError(
            f"{fm.stock_id} {fm.dates[d]}: window overlaps indicator warmup"
        )
    window = fm.values[:, sl].T.astype(np.float64)
    if norm == "global" and stats is None:
        stats = global_stats(fm)
    out = _normalize(window, norm, stats)
    return InputTensor(
        values=out.astype(np.float32),
        stock_id=fm.stock_id,
        target_date=fm.dates[d],
        normalization=norm,
    )


@dataclass(frozen=True)
class LabeledDataset:
    """Array-backed collection of (tensor, label) pairs for one stock."""

    stock_id: str
    tensors: np.ndarray          # (N, 22, 15) float32
    labels: np.ndarray           # (N,) int64 ordinals
    target_dates: tuple[date, ...]
    normalization: str

    def __post_init__(self):
        n = len(self.target_dates)
        if self.tensors.shape != (n, WINDOW_DAYS, len(FEATURE_NAMES)):
            raise DatasetError(f"dataset tensor block shape {self.tensors.shape}")
        if self.labels.shape != (n,):
            raise DatasetError("dataset labels shape mismatch")
        if n and not (
            (self.labels >= 0).all() and (self.labels <= max(TrendLabel)).all()
        ):
            raise DatasetError("label ordinal out of range")

    def __len__(self) -> int:
        return len(self.target_dates)

    @property
    def is_empty(self) -> bool:
        return len(self) == 0

    @property
    def date_range(self) -> tuple[date, date] | None:
        """(first, last) target date, or None when empty."""
        if self.is_empty:
            return None
        return (self.target_dates[0], self.target_dates[-1])

    def class_counts(self) -> dict[TrendLabel, int]:
        counts = {label: 0 for label in TrendLabel}
        for ordinal, count in zip(*np.unique(self.labels, return_counts=True)):
            counts[TrendLabel(int(ordinal))] = int(count)
        return counts

    def examples(self):
        for i in range(len(self)):
            yield LabeledExample(
                tensor=InputTensor(
                    values=self.tensors[i],
                    stock_id=self.stock_id,
                    target_date=self.target_dates[i],
                    normalization=self.normalization,
                ),
                label=TrendLabel(int(self.labels[i])),
            )

    def slice_range(self, rng: DateRange) -> "LabeledDataset":
        keep = [i for i, day in enumerate(self.target_dates) if day in rng]
        return LabeledDataset(
            stock_id=self.stock_id,
            tensors=self.tensors[keep],
            labels=self.labels[keep],
            target_dates=tuple(self.target_dates[i] for i in keep),
            normalization=self.normalization,
        )

    def take(self, indices) -> "LabeledDataset":
        indices = list(indices)
        return LabeledDataset(
            stock_id=self.stock_id,
            tensors=self.tensors[indices],
            labels=self.labels[indices],
            target_dates=tuple(self.target_dates[i] for i in indices),
            normalization=self.normalization,
        )


def empty_dataset(stock_id: str, normalization: str) -> LabeledDataset:
    return LabeledDataset(
        stock_id=stock_id,
        tensors=np.zeros((0, WINDOW_DAYS, len(FEATURE_NAMES)), dtype=np.float32),
        labels=np.zeros((0,), dtype=np.int64),
        target_dates=(),
        normalization=normalization,
    )


def concat_datasets(datasets: list[LabeledDataset], stock_id: str = "<union>") -> LabeledDataset:
    datasets = [d for d in datasets]
    if not datasets:
        raise DatasetError("nothing to concatenate")
    norms = {d.normalization for d in datasets}
    if len(norms) != 1:
        raise DatasetError(f"mixed normalizations {norms}")
    return LabeledDataset(
        stock_id=stock_id,
        tensors=np.concatenate([d.tensors for d in datasets]),
        labels=np.concatenate([d.labels for d in datasets]),
        target_dates=tuple(day for d in datasets for day in d.target_dates),
        normalization=norms.pop(),
    )


def build_dataset(fm: FeatureMatrix, labels: LabelSequence,
                  date_range: DateRange | None = None,
                  norm: str = "zscore") -> LabeledDataset:
    """One labeled example per labeled, history-sufficient day in range.

    Unlabeled days and days whose 22-day window would touch warmup cells are
    skipped. An empty result is returned as an explicit empty dataset.
    """
    if norm not in NORM_POLICIES:
        raise DatasetError(f"unknown normalization {norm!r}")
    pos = {day: t for t, day in enumerate(fm.dates)}
    stats = global_stats(fm) if norm == "global" else None
    min_index = WINDOW_DAYS - 1 + fm.max_warmup
    tensors, ordinals, dates = [], [], []
    for day, label in labels.items():
        if date_range is not None and day not in date_range:
            continue
        t = pos.get(day)
        if t is None or t < min_index:
            continue
        tensor = window_tensor(fm, t, norm, stats)
        tensors.append(tensor.values)
        ordinals.append(int(label))
        dates.append(day)
    if not tensors:
        logger.warning("%s: empty dataset for range %s", fm.stock_id, date_range)
        return empty_dataset(fm.stock_id, norm)
    return LabeledDataset(
        stock_id=fm.stock_id,
        tensors=np.stack(tensors).astype(np.float32),
        labels=np.asarray(ordinals, dtype=np.int64),
        target_dates=tuple(dates),
        normalization=norm,
    )


def save_dataset(ds: LabeledDataset, stem: str | Path, config_hash: str | None = None) -> None:
    """Persist as <stem>.json / <stem>.bin / <stem>.index.csv (atomic writes)."""
    stem = Path(stem)
    header = {
        "kind": "labeled-dataset",
        "stock_id": ds.stock_id,
        "count": len(ds),
        "shape": [len(ds), WINDOW_DAYS, len(FEATURE_NAMES)],
        "dtype": "<f4",
        "feature_checksum": feature_checksum(),
        "normalization": ds.normalization,
    }
    if config_hash is not None:
        header["config_hash"] = config_hash
    atomic_write_text(stem.with_suffix(".json"),
                      json.dumps(header, indent=2, sort_keys=True) + "\n")
    atomic_write_bytes(stem.with_suffix(".bin"),
                       np.ascontiguousarray(ds.tensors, dtype="<f4").tobytes())
    rows = [
        (i, ds.stock_id, ds.target_dates[i].isoformat(), TrendLabel(int(ds.labels[i])).csv_name)
        for i in range(len(ds))
    ]
    write_csv(Path(str(stem) + ".index.csv"),
              ["row", "stock_id", "date", "label"], rows, config_hash=config_hash)


def load_dataset(stem: str | Path, expect_hash: str | None = None) -> LabeledDataset:
    stem = Path(stem)
    header_path = stem.with_suffix(".json")
    if not header_path.exists():
        from metatrend.errors import ArtifactMissingError
        raise ArtifactMissingError(header_path, "dataset")
    with open(header_path) as fh:
        header = json.load(fh)
    if header.get("feature_checksum") != feature_checksum():
        raise DatasetError(
            f"{header_path}: feature checksum {header.get('feature_checksum')} "
            f"does not match this build ({feature_checksum()})"
        )
    if expect_hash is not None and header.get("config_hash") not in (None, expect_hash):
        from metatrend.errors import ArtifactMismatchError
        raise ArtifactMismatchError(
            f"{header_path}: config hash {header['config_hash']} != {expect_hash}"
        )
    shape = tuple(header["shape"])
    blob = np.frombuffer(Path(stem.with_suffix(".bin")).read_bytes(), dtype="<f4")
    if blob.size != int(np.prod(shape)):
        raise DatasetError(f"{stem}.bin: blob size {blob.size} != shape {shape}")
    tensors = blob.reshape(shape).copy()
    _, rows, _ = read_csv(Path(str(stem) + ".index.csv"), expect_hash=expect_hash)
    if len(rows) != shape[0]:
        raise DatasetError(f"{stem}.index.csv: {len(rows)} rows != {shape[0]}")
    dates = tuple(date.fromisoformat(r[2]) for r in rows)
    labels = np.asarray([int(TrendLabel.from_csv_name(r[3])) for r in rows], dtype=np.int64)
    return LabeledDataset(
        stock_id=header["stock_id"],
        tensors=tensors,
        labels=labels,
        target_dates=dates,
        normalization=header["normalization"],
    )
