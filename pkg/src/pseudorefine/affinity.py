"""Pairwise affinity supervision, affinity loss and random-walk propagation."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .tensor_io import IGNORE_LABEL, LabelImage

log = logging.getLogger(__name__)

NEGATIVE = 0
POSITIVE = 1
IGNORED = 255

ZERO_ROW = 1e-12


@dataclass
class AffinityLabel:
    """Ternary pair labels over an h x w grid, stored as an [hw, hw] uint8 code array."""

    labels: np.ndarray
    radius: int
    height: int
    width: int

    @property
    def positive(self):
        return self.labels == POSITIVE

    @property
    def negative(self):
        return self.labels == NEGATIVE


@dataclass
class TransitionMatrix:
    matrix: np.ndarray
    alpha: float


@dataclass
class AffinityLossResult:
    loss: float
    grad: np.ndarray
    num_positive: int
    num_negative: int

    @property
    def degenerate(self) -> bool:
        """True when neither positive nor negative pairs exist."""
        return self.num_positive == 0 and self.num_negative == 0

    def __iter__(self):
        yield self.loss
        yield self.grad


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def downsample_nearest(labels, target_h: int, target_w: int) -> np.ndarray:
    """Nearest-neighbour resize to a grid no larger than the source.

    Target cell ``i`` samples source row ``floor((i + 0.5) * H / target_h)``.
    """
    lab = np.asarray(labels)
    h, w = lab.shape
    if target_h < 1 or target_w < 1:
        raise ValueError("target dims must be >= 1")
    if target_h > h or target_w > w:
        raise ValueError(f"cannot upsample labels from {h}x{w} to {target_h}x{target_w}")
    rows = ((np.arange(target_h) + 0.5) * h / target_h).astype(np.int64)
    cols = ((np.arange(target_w) + 0.5) * w / target_w).astype(np.int64)
    return lab[np.ix_(rows, cols)]


def derive_affinity_label(yp, radius: int, target_h: int | None = None, target_w: int | None = None) -> AffinityLabel:
    """Pairs within Chebyshev distance ``radius`` are positive when their labels
    agree and negative otherwise; pairs touching an ignore pixel or lying
    outside the window are ignored."""
    if radius < 1:
        raise ValueError(f"radius must be >= 1, got {radius}")
    lab = yp.labels if isinstance(yp, LabelImage) else np.asarray(yp)
    th = lab.shape[0] if target_h is None else target_h
    tw = lab.shape[1] if target_w is None else target_w
    small = downsample_nearest(lab, th, tw).reshape(-1).astype(np.int64)

    ii, jj = np.divmod(np.arange(th * tw), tw)
    cheb = np.maximum(np.abs(ii[:, None] - ii[None, :]), np.abs(jj[:, None] - jj[None, :]))
    out = np.where(small[:, None] == small[None, :], POSITIVE, NEGATIVE).astype(np.uint8)
    ignore = (small == IGNORE_LABEL)
    out[(cheb > radius) | ignore[:, None] | ignore[None, :]] = IGNORED
    return AffinityLabel(out, radius, th, tw)


def affinity_loss(a, labels) -> AffinityLossResult:
    """Mean (1 - sigmoid) over positive pairs plus mean sigmoid over negatives.

    Returns the loss and its exact gradient with respect to the logits ``a``.
    An empty positive or negative set contributes nothing.
    """
    a = np.asarray(a, dtype=np.float64)
    codes = labels.labels if isinstance(labels, AffinityLabel) else np.asarray(labels)
    if a.shape != codes.shape:
        raise ValueError(f"affinity {a.shape} and labels {codes.shape} differ in shape")
    pos = codes == POSITIVE
    neg = codes == NEGATIVE
    n_pos = int(pos.sum())
    n_neg = int(neg.sum())
    s = sigmoid(a)
    ds = s * (1.0 - s)
    loss = 0.0
    grad = np.zeros_like(a)
    if n_pos:
        loss += float(np.sum(1.0 - s[pos])) / n_pos
        grad[pos] = -ds[pos] / n_pos
    if n_neg:
        loss += float(np.sum(s[neg])) / n_neg
        grad[neg] = ds[neg] / n_neg
    if not (n_pos or n_neg):
        log.warning("affinity loss has no positive or negative pairs; returning 0")
    return AffinityLossResult(loss, grad, n_pos, n_neg)


def transition_matrix(a, alpha: float = 2.0) -> TransitionMatrix:
    """Row-normalised ``sigmoid(a) ** alpha``; rows summing below 1e-12 become identity rows."""
    if alpha < 1:
        raise ValueError(f"alpha must be >= 1, got {alpha}")
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"affinity must be square, got {a.shape}")
    p = sigmoid(a) ** alpha
    rows = p.sum(axis=1, keepdims=True)
    dead = rows[:, 0] < ZERO_ROW
    t = p / np.where(dead[:, None], 1.0, rows)
    if dead.any():
        t[dead] = 0.0
        t[dead, np.flatnonzero(dead)] = 1.0
    return TransitionMatrix(t, alpha)


def propagate(maps, t) -> np.ndarray:
    """One random-walk step: every class channel, flattened, is left-multiplied by T."""
    m = np.asarray(maps, dtype=np.float64)
    mat = t.matrix if isinstance(t, TransitionMatrix) else np.asarray(t, dtype=np.float64)
    if m.ndim != 3:
        raise ValueError(f"maps must be [h, w, C], got {m.shape}")
    h, w, c = m.shape
    if mat.shape != (h * w, h * w):
        raise ValueError(f"transition matrix {mat.shape} does not match a {h}x{w} map")
    return (mat @ m.reshape(h * w, c)).reshape(h, w, c)
