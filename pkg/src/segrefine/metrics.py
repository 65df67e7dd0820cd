"""Confusion-matrix bookkeeping and per-class / mean IoU.

Rows index ground truth, columns index prediction. Pixels carrying the
ignore label contribute nothing. Classes absent from both prediction and
ground truth (zero IoU denominator) are excluded from the mean rather than
counted as zero; their per-class entry is NaN. This matters for reported
numbers, so it is also called out in the README.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import LabelOutOfRange, ShapeMismatch


@dataclass(frozen=True)
class ConfusionMatrix:
    num_classes: int
    ignore_index: int | None = 255
    counts: np.ndarray = field(default=None)  # i64, C x C

    def __post_init__(self):
        if self.counts is None:
            object.__setattr__(
                self, "counts",
                np.zeros((self.num_classes, self.num_classes), dtype=np.int64))
        if self.counts.shape != (self.num_classes, self.num_classes):
            raise ShapeMismatch(f"counts must be {self.num_classes} square")

    @property
    def pixels_evaluated(self) -> int:
        return int(self.counts.sum())


def accumulate(cm: ConfusionMatrix, pred: np.ndarray, gt: np.ndarray) -> ConfusionMatrix:
    """Return a new matrix with one image's pixels added."""
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"pred {pred.shape} vs gt {gt.shape}")
    p = np.asarray(pred).ravel().astype(np.int64)
    g = np.asarray(gt).ravel().astype(np.int64)
    if cm.ignore_index is not None:
        keep = g != cm.ignore_index
        p, g = p[keep], g[keep]
    c = cm.num_classes
    if p.size and (p.min() < 0 or p.max() >= c or g.min() < 0 or g.max() >= c):
        raise LabelOutOfRange(f"labels must lie in [0, {c})")
    delta = np.bincount(g * c + p, minlength=c * c).reshape(c, c)
    return ConfusionMatrix(num_classes=c, ignore_index=cm.ignore_index,
                           counts=cm.counts + delta)


def merge(matrices) -> ConfusionMatrix:
    """Elementwise sum of per-image matrices (associative and commutative)."""
    matrices = list(matrices)
    if not matrices:
        raise ValueError("nothing to merge")
    first = matrices[0]
    total = np.zeros_like(first.counts)
    for m in matrices:
        if m.num_classes != first.num_classes:
            raise ShapeMismatch("cannot merge matrices with different class counts")
        total = total + m.counts
    return ConfusionMatrix(num_classes=first.num_classes,
                           ignore_index=first.ignore_index, counts=total)


def miou(cm: ConfusionMatrix) -> tuple[list[float], float]:
    """Per-class IoU (NaN where undefined) and their mean over defined ones."""
    counts = cm.counts.astype(np.float64)
    tp = np.diag(counts)
    denom = counts.sum(axis=0) + counts.sum(axis=1) - tp
    per_class = np.full(cm.num_classes, math.nan)
    defined = denom > 0
    per_class[defined] = tp[defined] / denom[defined]
    mean = float(per_class[defined].mean()) if defined.any() else math.nan
    return per_class.tolist(), mean


def metrics_dict(cm: ConfusionMatrix, class_names) -> dict:
    """JSON-ready metrics payload; undefined classes are omitted."""
    per_class, mean = miou(cm)
    return {
        "per_class_iou": {name: value for name, value in zip(class_names, per_class)
                          if not math.isnan(value)},
        "miou": mean,
        "pixels_evaluated": cm.pixels_evaluated,
    }
