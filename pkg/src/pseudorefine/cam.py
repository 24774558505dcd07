"""Class activation maps, top-k pooling and background thresholding.

Activation maps are [h, w, C] arrays over the foreground classes: channel
``k`` holds class ``k + 1`` because label 0 is reserved for background.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor_io import BACKGROUND_LABEL, IGNORE_LABEL, LabelImage

DEGENERATE_RANGE = 1e-8


@dataclass(frozen=True)
class BackgroundThresholds:
    beta: float = 0.45
    beta_l: float = 0.35
    beta_h: float = 0.55

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise ValueError(f"beta must be in (0, 1), got {self.beta}")
        check_dual(self.beta_l, self.beta_h)


def check_dual(beta_l, beta_h):
    if not 0.0 < beta_l < beta_h < 1.0:
        raise ValueError(f"need 0 < beta_l < beta_h < 1, got ({beta_l}, {beta_h})")


def top_k_count(n: int, k_percent: float) -> int:
    """Number of elements averaged by top-k pooling, never below one."""
    # the small offset absorbs binary round-off in n * k / 100 (e.g. 30 * 10 / 100)
    return max(1, min(n, math.ceil(n * k_percent / 100.0 - 1e-9)))


def top_k_pool(features, k_percent: float) -> np.ndarray:
    """Average the largest ``k_percent`` % values of each channel of [h, w, d] features.

    k = 100 is global average pooling; any k small enough to select a single
    element is global max pooling.
    """
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 3:
        raise ValueError(f"features must be [h, w, d], got {f.shape}")
    if not 0.0 < k_percent <= 100.0:
        raise ValueError(f"k must be in (0, 100], got {k_percent}")
    h, w, d = f.shape
    if h * w < 1:
        raise ValueError("empty spatial grid")
    flat = f.reshape(h * w, d)
    count = top_k_count(h * w, k_percent)
    if count == h * w:
        return flat.mean(axis=0)
    if count == 1:
        return flat.max(axis=0)
    top = -np.sort(-flat, axis=0)[:count]
    return top.mean(axis=0)


def minmax_normalize(maps) -> np.ndarray:
    """Scale each channel of [h, w, C] to [0, 1]; flat channels become zero."""
    m = np.asarray(maps, dtype=np.float64)
    lo = m.min(axis=(0, 1), keepdims=True)
    hi = m.max(axis=(0, 1), keepdims=True)
    span = hi - lo
    flat = span <= DEGENERATE_RANGE
    out = (m - lo) / np.where(flat, 1.0, span)
    out = np.where(flat, 0.0, out)
    return np.clip(out, 0.0, 1.0)


def generate_cam(features, weights, classes_present) -> np.ndarray:
    """CAM for the present classes: weighted channel sum, ReLU, min-max per class.

    ``features`` is [h, w, d], ``weights`` is [d, C], ``classes_present`` holds
    1-based class ids. Absent classes get all-zero maps.
    """
    f = np.asarray(features, dtype=np.float64)
    wts = np.asarray(weights, dtype=np.float64)
    if f.ndim != 3:
        raise ValueError(f"features must be [h, w, d], got {f.shape}")
    if wts.ndim != 2 or wts.shape[0] != f.shape[2]:
        raise ValueError(f"weights must be [{f.shape[2]}, C], got {wts.shape}")
    classes = sorted(set(int(c) for c in classes_present))
    if not classes:
        raise ValueError("classes_present is empty")
    num = wts.shape[1]
    for c in classes:
        if not 1 <= c <= num:
            raise ValueError(f"class id {c} outside 1..{num}")
    raw = np.maximum(f @ wts, 0.0)
    out = np.zeros_like(raw)
    idx = [c - 1 for c in classes]
    out[:, :, idx] = minmax_normalize(raw[:, :, idx])
    return out


def _argmax_labels(m: np.ndarray):
    # np.argmax returns the first maximum, i.e. the lowest class index on ties
    return np.argmax(m, axis=2) + 1, m.max(axis=2)


def threshold_single(maps, beta: float) -> LabelImage:
    """Foreground argmax where the max activation reaches ``beta``, else background."""
    m = np.asarray(maps, dtype=np.float64)
    if m.ndim != 3 or m.shape[2] < 1:
        raise ValueError(f"maps must be [h, w, C], got {m.shape}")
    cls, peak = _argmax_labels(m)
    return LabelImage(np.where(peak >= beta, cls, BACKGROUND_LABEL).astype(np.uint8))


def threshold_dual(maps, beta_l: float, beta_h: float) -> LabelImage:
    """Split pixels into confident foreground, background (0) and uncertain (255)."""
    check_dual(beta_l, beta_h)
    m = np.asarray(maps, dtype=np.float64)
    if m.ndim != 3 or m.shape[2] < 1:
        raise ValueError(f"maps must be [h, w, C], got {m.shape}")
    cls, peak = _argmax_labels(m)
    lab = np.full(peak.shape, IGNORE_LABEL, dtype=np.int64)
    lab[peak <= beta_l] = BACKGROUND_LABEL
    fg = peak >= beta_h
    lab[fg] = cls[fg]
    return LabelImage(lab.astype(np.uint8))
