"""Deterministic synthetic scenes: coloured blobs on a flat background."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attention import AttentionParams, AttentionStack, HeadCombiner, mhsa_forward
from .tensor_io import LabelImage, RgbImage


@dataclass(frozen=True)
class Blob:
    top: int
    left: int
    height: int
    width: int
    color: tuple[float, float, float]
    class_id: int

    def slices(self, coverage: float = 1.0):
        """Row/column slices of the blob, or of its centred core when coverage < 1."""
        ch = max(1, int(round(self.height * coverage)))
        cw = max(1, int(round(self.width * coverage)))
        t = self.top + (self.height - ch) // 2
        l = self.left + (self.width - cw) // 2
        return slice(t, t + ch), slice(l, l + cw)


@dataclass(frozen=True)
class SceneSpec:
    height: int = 32
    width: int = 32
    blobs: tuple[Blob, ...] = ()
    background: tuple[float, float, float] = (0.5, 0.5, 0.5)
    num_classes: int | None = None
    noise: float = 0.0
    cam_coverage: float = 1.0
    seed: int = 0


@dataclass
class SyntheticScene:
    image: RgbImage
    features: np.ndarray  # [h, w, C] float32
    weights: np.ndarray   # [C, C] float32
    truth: LabelImage
    classes: list[int] = field(default_factory=list)


def two_blob_scene(noise: float = 0.0, cam_coverage: float = 0.5, seed: int = 0) -> SceneSpec:
    """Two 8x8 blobs (red class 1, blue class 2) on a grey 32x32 canvas."""
    return SceneSpec(
        height=32,
        width=32,
        blobs=(
            Blob(6, 5, 8, 8, (0.9, 0.1, 0.1), 1),
            Blob(17, 19, 8, 8, (0.1, 0.2, 0.9), 2),
        ),
        noise=noise,
        cam_coverage=cam_coverage,
        seed=seed,
    )


def _quantize(color):
    # keep colours on the 8-bit grid so a PPM round trip is exact
    return np.rint(np.asarray(color, dtype=np.float64) * 255.0) / 255.0


def make_synthetic(spec: SceneSpec) -> SyntheticScene:
    h, w = spec.height, spec.width
    if h < 1 or w < 1:
        raise ValueError("canvas must be at least 1x1")
    if not 0.0 < spec.cam_coverage <= 1.0:
        raise ValueError("cam_coverage must be in (0, 1]")
    num = spec.num_classes or max((b.class_id for b in spec.blobs), default=1)

    occupied = np.zeros((h, w), dtype=bool)
    image = np.broadcast_to(_quantize(spec.background), (h, w, 3)).copy()
    truth = np.zeros((h, w), dtype=np.uint8)
    features = np.zeros((h, w, num))
    for b in spec.blobs:
        if not 1 <= b.class_id <= num:
            raise ValueError(f"blob class {b.class_id} outside 1..{num}")
        if b.top < 0 or b.left < 0 or b.top + b.height > h or b.left + b.width > w or b.height < 1 or b.width < 1:
            raise ValueError(f"blob {b} does not fit the {h}x{w} canvas")
        rs, cs = b.slices()
        if occupied[rs, cs].any():
            raise ValueError(f"blob {b} overlaps another blob")
        occupied[rs, cs] = True
        image[rs, cs] = _quantize(b.color)
        truth[rs, cs] = b.class_id
        crs, ccs = b.slices(spec.cam_coverage)
        features[crs, ccs, b.class_id - 1] = 1.0

    if spec.noise > 0:
        rng = np.random.default_rng(spec.seed)
        features = features + rng.normal(0.0, spec.noise, features.shape)
    classes = sorted({b.class_id for b in spec.blobs})
    return SyntheticScene(
        RgbImage(image),
        features.astype(np.float32),
        np.eye(num, dtype=np.float32),
        LabelImage(truth),
        classes,
    )


def color_attention_params(sharpness: float = 50.0) -> AttentionParams:
    """Single-head projections whose scores are ``-sharpness * |c_p - c_q|^2 / (2 sqrt(5))``.

    Tokens are ``[r, g, b, |c|^2, 1]``; queries map to ``[c, -|c|^2/2, 1]`` and
    keys to ``[c, 1, -|c|^2/2]`` so that ``q . k = -|c_p - c_q|^2 / 2``.
    """
    wq = np.zeros((5, 5))
    wk = np.zeros((5, 5))
    for i in range(3):
        wq[i, i] = wk[i, i] = 1.0
    wq[3, 3], wq[4, 4] = -0.5, 1.0
    wk[4, 3], wk[3, 4] = 1.0, -0.5
    wq *= sharpness
    return AttentionParams(wq[None], wk[None], np.eye(5)[None], np.eye(5), np.zeros(5))


def color_tokens(image) -> np.ndarray:
    px = image.pixels if isinstance(image, RgbImage) else np.asarray(image, dtype=np.float64)
    c = px.reshape(-1, 3)
    return np.concatenate([c, (c**2).sum(axis=1, keepdims=True), np.ones((c.shape[0], 1))], axis=1)


def color_attention(image, sharpness: float = 50.0) -> AttentionStack:
    """Attention stack whose scores fall off with squared colour distance."""
    px = image.pixels if isinstance(image, RgbImage) else np.asarray(image)
    _, stack = mhsa_forward(color_tokens(px), color_attention_params(sharpness), px.shape[0], px.shape[1])
    return stack


# logits are bias - sharpness * |dc|^2 / sqrt(5): same colour -> +4, distinct colours -> very negative
COLOR_COMBINER = HeadCombiner(np.array([1.0]), 4.0)
