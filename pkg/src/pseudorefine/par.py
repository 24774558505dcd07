"""Pixel-adaptive refinement over dilated 8-way neighbourhoods.

The kernel for a centre pixel mixes a softmax over colour similarity with a
``w3``-weighted softmax over XY distance, both taken over the pixel's valid
(in-bounds) neighbours. Refinement repeatedly replaces every activation with
the kernel-weighted sum of its neighbours' activations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor_io import RgbImage

DIRECTIONS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


@dataclass(frozen=True)
class ParConfig:
    dilations: tuple[int, ...] = (1, 2, 4, 8, 12, 24)
    w1: float = 0.3
    w2: float = 0.3
    w3: float = 0.01
    iterations: int = 15
    sigma_floor: float = 1e-8

    def __post_init__(self):
        dil = tuple(int(d) for d in self.dilations)
        object.__setattr__(self, "dilations", dil)
        if not dil or any(d < 1 for d in dil) or len(set(dil)) != len(dil):
            raise ValueError(f"dilations must be unique positive ints, got {dil}")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.sigma_floor <= 0:
            raise ValueError("sigma_floor must be > 0")
        if self.w1 <= 0 or self.w2 <= 0 or self.w3 < 0:
            raise ValueError("need w1 > 0, w2 > 0, w3 >= 0")


@dataclass
class NeighborSet:
    """Dilated neighbour offsets and their per-pixel validity.

    ``offsets`` is [K, 2] (dy, dx); ``valid`` and ``index`` are [h, w, K], where
    ``index`` is the flat neighbour index (the centre itself where invalid).
    """

    height: int
    width: int
    offsets: np.ndarray
    valid: np.ndarray
    index: np.ndarray

    def neighbors_of(self, i, j):
        return [(i + int(dy), j + int(dx)) for (dy, dx), ok in zip(self.offsets, self.valid[i, j]) if ok]


@dataclass
class RefinementKernel:
    neighbors: NeighborSet
    weights: np.ndarray  # [h, w, K], zero on invalid slots
    w3: float = 0.0

    @property
    def has_neighbors(self) -> np.ndarray:
        return self.neighbors.valid.any(axis=2)


def build_neighbors(h: int, w: int, dilations) -> NeighborSet:
    if h < 1 or w < 1:
        raise ValueError(f"image must be at least 1x1, got {h}x{w}")
    offsets = np.array([(dy * d, dx * d) for d in dilations for dy, dx in DIRECTIONS], dtype=np.int64).reshape(-1, 2)
    ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    ni = ii[:, :, None] + offsets[:, 0]
    nj = jj[:, :, None] + offsets[:, 1]
    valid = (ni >= 0) & (ni < h) & (nj >= 0) & (nj < w)
    centre = (ii * w + jj)[:, :, None]
    index = np.where(valid, ni * w + nj, centre)
    return NeighborSet(h, w, offsets, valid, index)


def _masked_std(values, valid, floor):
    # values [..., K, ...] reduced over axis 2 (the neighbour axis)
    n = np.maximum(valid.sum(axis=2, keepdims=True), 1)
    mask = valid if values.ndim == valid.ndim else valid[..., None]
    nn = n if values.ndim == valid.ndim else n[..., None]
    mean = np.where(mask, values, 0.0).sum(axis=2, keepdims=True) / nn
    var = np.where(mask, (values - mean) ** 2, 0.0).sum(axis=2, keepdims=True) / nn
    return np.maximum(np.sqrt(var), floor)


def _masked_softmax(logits, valid):
    z = np.where(valid, logits, -np.inf)
    top = z.max(axis=2, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    e = np.where(valid, np.exp(z - top), 0.0)
    total = e.sum(axis=2, keepdims=True)
    return e / np.where(total > 0, total, 1.0)


def build_kernel(image, neighbors: NeighborSet, cfg: ParConfig) -> RefinementKernel:
    px = image.pixels if isinstance(image, RgbImage) else np.asarray(image, dtype=np.float64)
    h, w = px.shape[:2]
    if (h, w) != (neighbors.height, neighbors.width):
        raise ValueError(f"image is {h}x{w} but the neighbour set is {neighbors.height}x{neighbors.width}")
    valid = neighbors.valid

    nb = px.reshape(-1, 3)[neighbors.index]                     # [h, w, K, 3]
    diff = np.abs(px[:, :, None, :] - nb)
    sigma_rgb = _masked_std(diff, valid, cfg.sigma_floor)        # [h, w, 1, 3]
    k_rgb = (-((diff / (cfg.w1 * sigma_rgb)) ** 2)).mean(axis=3)

    dist = np.broadcast_to(np.hypot(neighbors.offsets[:, 0], neighbors.offsets[:, 1]).astype(np.float64), valid.shape)
    sigma_pos = _masked_std(dist, valid, cfg.sigma_floor)       # [h, w, 1]
    k_pos = -((dist / (cfg.w2 * sigma_pos)) ** 2)

    weights = _masked_softmax(k_rgb, valid) + cfg.w3 * _masked_softmax(k_pos, valid)
    return RefinementKernel(neighbors, np.where(valid, weights, 0.0), cfg.w3)


def refine(maps, kernel: RefinementKernel, iterations: int) -> np.ndarray:
    """Apply ``iterations`` rounds of kernel-weighted neighbour averaging.

    Output is not renormalised; pixels without neighbours are left as is.
    """
    m = np.asarray(maps, dtype=np.float64)
    nbrs = kernel.neighbors
    if m.ndim != 3 or m.shape[:2] != (nbrs.height, nbrs.width):
        raise ValueError(f"map {m.shape} does not match kernel grid {nbrs.height}x{nbrs.width}")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    h, w, c = m.shape
    idx = nbrs.index.reshape(h * w, -1)
    wts = kernel.weights.reshape(h * w, -1, 1)
    keep = ~kernel.has_neighbors.reshape(h * w, 1)
    cur = m.reshape(h * w, c)
    for _ in range(iterations):
        nxt = (wts * cur[idx]).sum(axis=1)
        cur = np.where(keep, cur, nxt)
    return cur.reshape(h, w, c)


def par_refine(image, maps, cfg: ParConfig | None = None) -> np.ndarray:
    """Build neighbours and kernel for ``image`` and refine ``maps`` with them."""
    cfg = cfg or ParConfig()
    px = image.pixels if isinstance(image, RgbImage) else np.asarray(image)
    nbrs = build_neighbors(px.shape[0], px.shape[1], cfg.dilations)
    return refine(maps, build_kernel(image, nbrs, cfg), cfg.iterations)
