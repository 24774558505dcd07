"""Central finite-difference checks of the analytic loss gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .affinity import IGNORED, NEGATIVE, POSITIVE, affinity_loss
from .losses import classification_loss, segmentation_loss
from .tensor_io import IGNORE_LABEL

STEP = 1e-3
TOLERANCE = 1e-4
DENOM_FLOOR = 1e-8


def numeric_grad(f, x, step=STEP):
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + step
        up = f(x)
        x[idx] = orig - step
        down = f(x)
        x[idx] = orig
        g[idx] = (up - down) / (2 * step)
    return g


def relative_error(analytic, numeric) -> float:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), DENOM_FLOOR)
    return float(np.max(np.abs(a - n) / denom))


def check(loss_and_grad, x, step=STEP) -> float:
    """Max relative error between ``loss_and_grad(x)[1]`` and finite differences."""
    _, g = loss_and_grad(x)
    return relative_error(g, numeric_grad(lambda z: loss_and_grad(z)[0], x, step))


# --------------------------------------------------------------------------
# random instances

def random_affinity_instance(rng, hw):
    a = rng.normal(0.0, 2.0, (hw, hw))
    codes = rng.choice([POSITIVE, NEGATIVE, IGNORED], size=(hw, hw), p=[0.4, 0.4, 0.2]).astype(np.uint8)
    codes.flat[0] = POSITIVE
    codes.flat[1] = NEGATIVE
    return a, codes


def random_classification_instance(rng, c):
    # central-difference truncation error on log p is step^2 / (3 p^2); near 0
    # or 1 it exceeds the tolerance regardless of the analytic gradient
    p = rng.uniform(0.1, 0.9, c)
    y = rng.integers(0, 2, c).astype(np.float64)
    return p, y


def random_segmentation_instance(rng, h, w, c):
    z = rng.normal(0.0, 2.0, (h, w, c))
    t = rng.integers(0, c, (h, w))
    t[rng.random((h, w)) < 0.2] = IGNORE_LABEL
    t.flat[0] = 0
    return z, t.astype(np.uint8)


@dataclass
class GradcheckSizes:
    instances: int = 50
    affinity_hw: int = 16
    classes: int = 4
    seg_height: int = 3
    seg_width: int = 3
    seg_classes: int = 4


LOSSES = {
    "affinity": lambda a, lab: affinity_loss(a, lab),
    "classification": classification_loss,
    "segmentation": segmentation_loss,
}


def gradcheck(seed: int = 0, sizes: GradcheckSizes | None = None, losses=None) -> dict[str, float]:
    """Worst relative gradient error per loss over random instances.

    ``losses`` maps names to ``f(x, target) -> (loss, grad)`` and defaults to
    the three training losses; it exists so a broken gradient can be injected.
    """
    sizes = sizes or GradcheckSizes()
    losses = {**LOSSES, **(losses or {})}
    rng = np.random.default_rng(seed)
    worst = {name: 0.0 for name in losses}
    for _ in range(sizes.instances):
        cases = {
            "affinity": random_affinity_instance(rng, sizes.affinity_hw),
            "classification": random_classification_instance(rng, sizes.classes),
            "segmentation": random_segmentation_instance(rng, sizes.seg_height, sizes.seg_width, sizes.seg_classes),
        }
        for name, fn in losses.items():
            x, target = cases[name]
            err = check(lambda z: tuple(fn(z, target))[:2], x)
            worst[name] = max(worst[name], err)
    return worst


def passed(report: dict[str, float], tol: float = TOLERANCE) -> bool:
    return all(v < tol for v in report.values())
