"""Tensor container and PPM/PGM image I/O.

Container layout (``.ten``)::

    8 bytes   magic  b"PRTENSOR"
    u8        rank
    rank*u64  dims, little-endian
    f32[...]  row-major payload, little-endian
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"PRTENSOR"
IGNORE_LABEL = 255
BACKGROUND_LABEL = 0


class TensorIOError(Exception):
    """Base class for container and image format errors."""

    code = "IOError"


class BadMagic(TensorIOError):
    code = "BadMagic"


class Truncated(TensorIOError):
    code = "Truncated"


class NonFinite(TensorIOError):
    code = "NonFinite"


class EmptyShape(TensorIOError):
    code = "EmptyShape"


class MalformedHeader(TensorIOError):
    code = "MalformedHeader"


class InvalidClassIndex(TensorIOError):
    code = "InvalidClassIndex"


@dataclass(frozen=True, eq=False)
class Tensor:
    """Dense row-major float32 array with an explicit shape."""

    shape: tuple[int, ...]
    data: np.ndarray

    def __post_init__(self):
        shape = tuple(int(s) for s in self.shape)
        if len(shape) == 0:
            raise EmptyShape("tensor shape must have at least one dimension")
        if any(s < 1 for s in shape):
            raise EmptyShape(f"tensor dimensions must be >= 1, got {shape}")
        data = np.ascontiguousarray(self.data, dtype=np.float32).reshape(-1)
        if data.size != int(np.prod(shape)):
            raise Truncated(f"data length {data.size} does not match shape {shape}")
        if not np.all(np.isfinite(data)):
            raise NonFinite("tensor contains NaN or Inf")
        data = data.copy()
        data.flags.writeable = False
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "data", data)

    @classmethod
    def from_array(cls, array) -> "Tensor":
        array = np.asarray(array)
        return cls(array.shape, array.reshape(-1))

    @property
    def array(self) -> np.ndarray:
        return self.data.reshape(self.shape)

    def __eq__(self, other):
        if not isinstance(other, Tensor):
            return NotImplemented
        # bitwise comparison so that -0.0 != 0.0
        return self.shape == other.shape and self.data.tobytes() == other.data.tobytes()

    def __repr__(self):
        return f"Tensor(shape={self.shape})"


def write_tensor(t, path) -> None:
    """Write a Tensor (or anything array-like) to ``path``."""
    if not isinstance(t, Tensor):
        t = Tensor.from_array(t)
    header = MAGIC + struct.pack("<B", len(t.shape)) + struct.pack(f"<{len(t.shape)}Q", *t.shape)
    payload = t.data.astype("<f4", copy=False).tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def read_tensor(path) -> Tensor:
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) or raw[: len(MAGIC)] != MAGIC:
        raise BadMagic(f"{path}: not a tensor container")
    pos = len(MAGIC)
    if len(raw) < pos + 1:
        raise Truncated(f"{path}: missing rank byte")
    rank = raw[pos]
    pos += 1
    if rank == 0:
        raise EmptyShape(f"{path}: rank 0")
    if len(raw) < pos + 8 * rank:
        raise Truncated(f"{path}: header ends inside the dimension list")
    shape = struct.unpack_from(f"<{rank}Q", raw, pos)
    pos += 8 * rank
    if any(s == 0 for s in shape):
        raise EmptyShape(f"{path}: zero-sized dimension in {shape}")
    expected = int(np.prod(shape, dtype=np.uint64)) * 4
    if len(raw) - pos != expected:
        raise Truncated(f"{path}: payload has {len(raw) - pos} bytes, shape {shape} needs {expected}")
    data = np.frombuffer(raw, dtype="<f4", offset=pos).astype(np.float32)
    if not np.all(np.isfinite(data)):
        raise NonFinite(f"{path}: payload contains NaN or Inf")
    return Tensor(shape, data)


# --------------------------------------------------------------------------
# images

@dataclass(frozen=True, eq=False)
class RgbImage:
    """RGB image with channels scaled to [0, 1]; ``pixels`` is [h, w, 3]."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"expected [h, w, 3] pixels, got {px.shape}")
        if px.size and (px.min() < 0.0 or px.max() > 1.0):
            raise ValueError("RGB values must lie in [0, 1]")
        px = px.copy()
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True, eq=False)
class LabelImage:
    """Per-pixel class indices. 0 is background, 255 is ignore."""

    labels: np.ndarray
    num_classes: int | None = None

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.ndim != 2:
            raise ValueError(f"expected [h, w] labels, got {lab.shape}")
        if lab.size and (lab.min() < 0 or lab.max() > 255):
            raise InvalidClassIndex("label values must fit in 0..255")
        lab = lab.astype(np.uint8)
        if self.num_classes is not None:
            _check_classes(lab, self.num_classes)
        lab.flags.writeable = False
        object.__setattr__(self, "labels", lab)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    def __eq__(self, other):
        if not isinstance(other, LabelImage):
            return NotImplemented
        return np.array_equal(self.labels, other.labels)


def _check_classes(lab: np.ndarray, num_classes: int) -> None:
    bad = (lab >= num_classes) & (lab != IGNORE_LABEL)
    if bad.any():
        v = int(lab[bad][0])
        raise InvalidClassIndex(f"label {v} is not a class index (num_classes={num_classes}) or {IGNORE_LABEL}")


def _pnm_tokens(raw: bytes, count: int, path) -> tuple[list[int], int]:
    """Read ``count`` whitespace-separated header integers, skipping comments.

    Returns the integers and the offset just past the last token.
    """
    vals = []
    pos = 2
    n = len(raw)
    while len(vals) < count:
        while pos < n and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < n and raw[pos : pos + 1] == b"#":
            while pos < n and raw[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and raw[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise MalformedHeader(f"{path}: bad or missing header field")
        vals.append(int(raw[start:pos]))
    return vals, pos


def _read_pnm(path, kinds: dict[bytes, int]):
    raw = Path(path).read_bytes()
    magic = raw[:2]
    if magic not in kinds:
        raise MalformedHeader(f"{path}: unsupported magic {magic!r}, expected one of {sorted(kinds)}")
    channels = kinds[magic]
    (width, height, maxval), pos = _pnm_tokens(raw, 3, path)
    if width < 1 or height < 1 or not 1 <= maxval <= 65535:
        raise MalformedHeader(f"{path}: invalid dims or maxval ({width}x{height}, maxval {maxval})")
    count = width * height * channels
    if magic in (b"P5", b"P6"):
        # exactly one whitespace byte separates header from raster
        if pos >= len(raw) or not raw[pos : pos + 1].isspace():
            raise MalformedHeader(f"{path}: missing whitespace after header")
        pos += 1
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        if len(raw) - pos < count * dtype.itemsize:
            raise Truncated(f"{path}: raster shorter than header declares")
        values = np.frombuffer(raw, dtype=dtype, count=count, offset=pos).astype(np.int64)
    else:
        body = raw[pos:].split()
        if len(body) < count:
            raise Truncated(f"{path}: raster shorter than header declares")
        try:
            values = np.array([int(v) for v in body[:count]], dtype=np.int64)
        except ValueError as exc:
            raise MalformedHeader(f"{path}: non-integer raster value") from exc
    if values.size and values.max() > maxval:
        raise MalformedHeader(f"{path}: raster value exceeds maxval {maxval}")
    shape = (height, width, channels) if channels > 1 else (height, width)
    return values.reshape(shape), maxval


def read_image(path) -> RgbImage:
    """Read a P6 or P3 PPM, dividing every channel by maxval."""
    values, maxval = _read_pnm(path, {b"P6": 3, b"P3": 3})
    return RgbImage(values.astype(np.float64) / maxval)


def read_labels(path, num_classes: int | None = None) -> LabelImage:
    """Read a P5 or P2 PGM; values pass through unchanged."""
    values, _ = _read_pnm(path, {b"P5": 1, b"P2": 1})
    if values.max(initial=0) > 255:
        raise InvalidClassIndex(f"{path}: label values above 255")
    return LabelImage(values.astype(np.uint8), num_classes)


def write_labels(labels, path) -> None:
    lab = labels.labels if isinstance(labels, LabelImage) else np.asarray(labels, dtype=np.uint8)
    h, w = lab.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(lab, dtype=np.uint8).tobytes())


def write_image(image, path) -> None:
    """Write an RgbImage as binary P6 with maxval 255 (values are rounded)."""
    px = image.pixels if isinstance(image, RgbImage) else np.asarray(image, dtype=np.float64)
    h, w, _ = px.shape
    q = np.clip(np.rint(px * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(q.tobytes())
