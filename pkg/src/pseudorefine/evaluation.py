"""Confusion-matrix IoU / mIoU evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor_io import IGNORE_LABEL, LabelImage

VOC_CLASSES = (
    "bkg", "aero", "bicycle", "bird", "boat", "bottle", "bus", "car", "cat", "chair", "cow",
    "table", "dog", "horse", "motor", "person", "plant", "sheep", "sofa", "train", "tv",
)


@dataclass
class ConfusionMatrix:
    """Pixel counts indexed ``counts[truth, pred]``; ignore pixels never counted."""

    num_classes: int
    counts: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.counts is None:
            self.counts = np.zeros((self.num_classes, self.num_classes), dtype=np.int64)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (self.num_classes, self.num_classes):
            raise ValueError(f"counts must be {self.num_classes}x{self.num_classes}")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.num_classes != self.num_classes:
            raise ValueError("class counts differ")
        return ConfusionMatrix(self.num_classes, self.counts + other.counts)


def _labels(x):
    return x.labels if isinstance(x, LabelImage) else np.asarray(x)


def accumulate(pred, truth, cm: ConfusionMatrix) -> ConfusionMatrix:
    """Return a new matrix with this image pair's pixels added."""
    p = _labels(pred).astype(np.int64)
    t = _labels(truth).astype(np.int64)
    if p.shape != t.shape:
        raise ValueError(f"prediction {p.shape} and truth {t.shape} differ in shape")
    keep = t != IGNORE_LABEL
    p, t = p[keep], t[keep]
    n = cm.num_classes
    if t.size and (t.max() >= n or p.max() >= n):
        raise ValueError(f"class index >= {n} (truth max {t.max()}, prediction max {p.max()})")
    counts = np.bincount(t * n + p, minlength=n * n).reshape(n, n)
    return ConfusionMatrix(n, cm.counts + counts)


def miou(cm: ConfusionMatrix):
    """Per-class IoU (NaN for classes absent from both) and their mean."""
    if cm.total == 0:
        raise ValueError("confusion matrix is empty")
    tp = np.diag(cm.counts).astype(np.float64)
    union = cm.counts.sum(axis=0) + cm.counts.sum(axis=1) - tp
    seen = union > 0
    per_class = np.full(cm.num_classes, np.nan)
    per_class[seen] = tp[seen] / union[seen]
    return per_class, float(per_class[seen].mean())


def class_names(num_classes: int):
    if num_classes == len(VOC_CLASSES):
        return list(VOC_CLASSES)
    return [f"class_{c}" for c in range(num_classes)]


def format_report(per_class, mean, names=None) -> str:
    """One ``name=percent`` line per class followed by ``miou=percent``."""
    names = names or class_names(len(per_class))
    lines = []
    for name, v in zip(names, per_class):
        lines.append(f"{name}={'nan' if np.isnan(v) else f'{100 * v:.2f}'}")
    lines.append(f"miou={100 * mean:.2f}")
    return "\n".join(lines)
