"""Classification metrics over prediction records.

Four-level metrics use the frozen label ordinals; two-level metrics first
merge both rise labels and both fall labels (on predictions and actuals
alike) and then count. Balanced accuracy is macro-averaged recall with
zero-support classes excluded.
"""

import logging
from dataclasses import dataclass

import numpy as np

from metatrend.labeling import TrendLabel

logger = logging.getLogger(__name__)

FOUR_LEVEL_NAMES = tuple(label.csv_name for label in TrendLabel)
TWO_LEVEL_NAMES = ("rise", "fall")

# rise_plus/rise -> rise, fall/fall_plus -> fall
_MERGE = {0: 0, 1: 0, 2: 1, 3: 1}


@dataclass(frozen=True)
class ConfusionMatrix:
    """counts[actual, predicted]; class order matches ``class_names``."""

    counts: np.ndarray
    class_names: tuple[str, ...]

    def __post_init__(self):
        c = len(self.class_names)
        if self.counts.shape != (c, c):
            raise ValueError(f"confusion shape {self.counts.shape} != ({c}, {c})")
        if (self.counts < 0).any():
            raise ValueError("negative confusion count")

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def confusion(records, level: str = "four") -> ConfusionMatrix:
    if not records:
        raise ValueError("no prediction records")
    if level == "four":
        names = FOUR_LEVEL_NAMES
        mapper = {i: i for i in range(4)}
    elif level == "two":
        names = TWO_LEVEL_NAMES
        mapper = _MERGE
    else:
        raise ValueError(f"level must be four|two, got {level!r}")
    counts = np.zeros((len(names), len(names)), dtype=np.int64)
    for r in records:
        counts[mapper[int(r.actual)], mapper[int(r.predicted)]] += 1
    return ConfusionMatrix(counts, names)


def merge_confusion(cm: ConfusionMatrix) -> ConfusionMatrix:
    """Collapse a four-level matrix to two levels."""
    if cm.class_names != FOUR_LEVEL_NAMES:
        raise ValueError("expected a four-level matrix")
    counts = np.zeros((2, 2), dtype=np.int64)
    for a in range(4):
        for p in range(4):
            counts[_MERGE[a], _MERGE[p]] += cm.counts[a, p]
    return ConfusionMatrix(counts, TWO_LEVEL_NAMES)


def regular_accuracy(cm: ConfusionMatrix) -> float:
    return float(np.trace(cm.counts) / cm.total)


def balanced_accuracy(cm: ConfusionMatrix) -> float:
    """Mean per-class recall; classes that never occur are excluded."""
    recalls = []
    for c, name in enumerate(cm.class_names):
        support = cm.counts[c].sum()
        if support == 0:
            logger.warning("class %s has no actual records; excluded from balanced accuracy", name)
            continue
        recalls.append(cm.counts[c, c] / support)
    if not recalls:
        raise ValueError("every class has zero support")
    return float(np.mean(recalls))


def class_precision(cm: ConfusionMatrix, class_name: str) -> float:
    """Diagonal over column sum; 0 when the class is never predicted."""
    c = cm.class_names.index(class_name)
    predicted = cm.counts[:, c].sum()
    if predicted == 0:
        logger.warning("class %s never predicted; precision defined as 0", class_name)
        return 0.0
    return float(cm.counts[c, c] / predicted)


def _class_recall(cm: ConfusionMatrix, c: int) -> float:
    support = cm.counts[c].sum()
    return float(cm.counts[c, c] / support) if support else 0.0


def weighted_f1(cm: ConfusionMatrix) -> float:
    """Support-weighted mean of per-class F1 (F1 is 0 when P + R = 0)."""
    total = cm.total
    score = 0.0
    for c, name in enumerate(cm.class_names):
        support = int(cm.counts[c].sum())
        if support == 0:
            continue
        precision = class_precision(cm, name) if cm.counts[:, c].sum() else 0.0
        recall = _class_recall(cm, c)
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        score += (support / total) * f1
    return float(score)


def metrics_block(cm: ConfusionMatrix) -> dict:
    """All scalar metrics plus the matrix itself, JSON-ready."""
    return {
        "regular_accuracy": regular_accuracy(cm),
        "balanced_accuracy": balanced_accuracy(cm),
        "weighted_f1": weighted_f1(cm),
        "precision": {
            name: class_precision(cm, name) for name in cm.class_names
        },
        "confusion": cm.counts.tolist(),
        "class_names": list(cm.class_names),
        "records": cm.total,
    }


def evaluate_records(records) -> dict:
    """Four-level and two-level metric blocks for one run's records."""
    return {
        "four_level": metrics_block(confusion(records, "four")),
        "two_level": metrics_block(confusion(records, "two")),
    }


def per_month_breakdown(records) -> dict[str, dict]:
    """Optional month-by-month metric blocks (keys are YYYY-MM)."""
    by_month: dict[str, list] = {}
    for r in records:
        by_month.setdefault(f"{r.date.year:04d}-{r.date.month:02d}", []).append(r)
    return {month: evaluate_records(recs) for month, recs in sorted(by_month.items())}
