"""Classification, segmentation and combined training losses."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .attention import softmax
from .tensor_io import IGNORE_LABEL, LabelImage

PROB_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 0.1   # segmentation
    lambda2: float = 0.1   # affinity
    lambda3: float = 0.01  # regularisation

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise ValueError("loss weights must be non-negative")


def classification_loss(p, y):
    """Multi-label soft margin loss on class probabilities.

    ``-(1/C) sum_c [y log p + (1 - y) log(1 - p)]`` with ``p`` clamped to
    [1e-7, 1 - 1e-7]. The gradient is zero where the clamp is active.
    """
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if p.shape != y.shape or p.ndim != 1:
        raise ValueError(f"probabilities {p.shape} and labels {y.shape} must be equal-length vectors")
    c = p.size
    pc = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    loss = -float(np.sum(y * np.log(pc) + (1.0 - y) * np.log1p(-pc))) / c
    inside = (p > PROB_EPS) & (p < 1.0 - PROB_EPS)
    grad = np.where(inside, -(y / pc - (1.0 - y) / (1.0 - pc)) / c, 0.0)
    return loss, grad


def segmentation_loss(logits, target):
    """Softmax cross-entropy over non-ignore pixels; channel ``c`` scores label ``c``."""
    z = np.asarray(logits, dtype=np.float64)
    t = target.labels if isinstance(target, LabelImage) else np.asarray(target)
    if z.ndim != 3 or z.shape[:2] != t.shape:
        raise ValueError(f"logits {z.shape} do not match target {t.shape}")
    keep = t != IGNORE_LABEL
    n = int(keep.sum())
    grad = np.zeros_like(z)
    if n == 0:
        return 0.0, grad
    cls = t[keep].astype(np.int64)
    if cls.max() >= z.shape[2]:
        raise ValueError(f"target label {cls.max()} has no logit channel (C={z.shape[2]})")
    zk = z[keep]
    shifted = zk - zk.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(n)
    loss = -float(logp[rows, cls].sum()) / n
    g = softmax(zk, axis=1)
    g[rows, cls] -= 1.0
    grad[keep] = g / n
    return loss, grad


def combine(l_cls, l_seg, l_aff, l_reg, w: LossWeights | None = None) -> float:
    w = w or LossWeights()
    terms = (l_cls, l_seg, l_aff, l_reg)
    if not all(math.isfinite(float(v)) for v in terms):
        raise ValueError(f"non-finite loss term in {terms}")
    return float(l_cls) + w.lambda1 * float(l_seg) + w.lambda2 * float(l_aff) + w.lambda3 * float(l_reg)
