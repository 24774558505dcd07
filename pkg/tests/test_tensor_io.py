import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from pseudorefine.tensor_io import (
    MAGIC,
    BadMagic,
    EmptyShape,
    InvalidClassIndex,
    LabelImage,
    MalformedHeader,
    NonFinite,
    RgbImage,
    Tensor,
    Truncated,
    read_image,
    read_labels,
    read_tensor,
    write_image,
    write_labels,
    write_tensor,
)


def _container(shape, values):
    return (MAGIC + struct.pack("<B", len(shape)) + struct.pack(f"<{len(shape)}Q", *shape)
            + struct.pack(f"<{len(values)}f", *values))


def test_read_known_bytes(tmp_path):
    p = tmp_path / "t.ten"
    p.write_bytes(_container([2, 2], [1, 2, 3, 4]))
    t = read_tensor(p)
    assert t == Tensor((2, 2), np.array([1, 2, 3, 4], dtype=np.float32))
    assert t.array.tolist() == [[1, 2], [3, 4]]


def test_bad_magic(tmp_path):
    raw = bytearray(_container([2, 2], [1, 2, 3, 4]))
    raw[0] ^= 0xFF
    p = tmp_path / "t.ten"
    p.write_bytes(bytes(raw))
    with pytest.raises(BadMagic):
        read_tensor(p)


def test_truncated_payload(tmp_path):
    p = tmp_path / "t.ten"
    p.write_bytes(_container([2, 3], [1, 2, 3, 4, 5]))
    with pytest.raises(Truncated):
        read_tensor(p)


def test_truncated_header(tmp_path):
    p = tmp_path / "t.ten"
    p.write_bytes(MAGIC + b"\x02" + b"\x00" * 5)
    with pytest.raises(Truncated):
        read_tensor(p)


def test_non_finite_rejected(tmp_path):
    p = tmp_path / "t.ten"
    p.write_bytes(_container([2], [1.0, float("nan")]))
    with pytest.raises(NonFinite):
        read_tensor(p)
    with pytest.raises(NonFinite):
        Tensor((1,), np.array([np.inf]))


def test_error_codes_distinct():
    assert len({BadMagic.code, Truncated.code, NonFinite.code, EmptyShape.code}) == 4


def test_scalar_round_trip(tmp_path):
    t = Tensor((1,), np.array([0.5]))
    write_tensor(t, tmp_path / "a.ten")
    assert read_tensor(tmp_path / "a.ten") == t


def test_rank3_round_trip(tmp_path):
    t = Tensor.from_array(np.arange(6, dtype=np.float32).reshape(3, 1, 2))
    write_tensor(t, tmp_path / "a.ten")
    back = read_tensor(tmp_path / "a.ten")
    assert back.shape == (3, 1, 2)
    assert back == t


def test_empty_shape():
    with pytest.raises(EmptyShape):
        Tensor((), np.array([]))
    with pytest.raises(EmptyShape):
        write_tensor(np.float32(1.0), "/nonexistent/never-written.ten")


def test_unwritable_path(tmp_path):
    with pytest.raises(OSError):
        write_tensor(np.zeros(2), tmp_path / "missing" / "a.ten")


@settings(max_examples=100, deadline=None)
@given(hnp.arrays(np.float32, hnp.array_shapes(min_dims=1, max_dims=4, max_side=5),
                  elements=st.floats(width=32, allow_nan=False, allow_infinity=False)))
def test_round_trip_property(tmp_path_factory, arr):
    p = tmp_path_factory.mktemp("rt") / "x.ten"
    write_tensor(arr, p)
    back = read_tensor(p)
    assert back.shape == arr.shape
    assert back.data.tobytes() == arr.reshape(-1).tobytes()


def test_ppm_binary_scaling(tmp_path):
    p = tmp_path / "a.ppm"
    p.write_bytes(b"P6\n1 1\n255\n" + bytes([255, 0, 0]))
    img = read_image(p)
    assert img.pixels.tolist() == [[[1.0, 0.0, 0.0]]]


def test_ppm_ascii_with_comment(tmp_path):
    p = tmp_path / "a.ppm"
    p.write_text("P3\n# comment\n2 1\n4\n4 0 2  1 1 1\n")
    img = read_image(p)
    np.testing.assert_array_equal(img.pixels[0, 0], [1.0, 0.0, 0.5])
    np.testing.assert_array_equal(img.pixels[0, 1], [0.25, 0.25, 0.25])


def test_pgm_identity(tmp_path):
    p = tmp_path / "a.pgm"
    p.write_bytes(b"P5\n2 2\n255\n" + bytes([0, 1, 255, 2]))
    lab = read_labels(p, num_classes=21)
    assert lab.labels.tolist() == [[0, 1], [255, 2]]


def test_pgm_ascii(tmp_path):
    p = tmp_path / "a.pgm"
    p.write_text("P2 2 2 255 0 1 255 2")
    assert read_labels(p).labels.tolist() == [[0, 1], [255, 2]]


def test_pgm_invalid_class(tmp_path):
    p = tmp_path / "a.pgm"
    p.write_bytes(b"P5\n1 1\n255\n" + bytes([254]))
    with pytest.raises(InvalidClassIndex):
        read_labels(p, num_classes=21)


@pytest.mark.parametrize("raw", [b"P7\n1 1\n255\n\x00", b"P5\n1\n", b"P5\n0 1 255\n", b"P5\n1 1 255"])
def test_malformed_headers(tmp_path, raw):
    p = tmp_path / "a.pgm"
    p.write_bytes(raw)
    with pytest.raises((MalformedHeader, Truncated)):
        read_labels(p)


def test_label_write_read(tmp_path, rng):
    lab = LabelImage(rng.integers(0, 5, (4, 7)).astype(np.uint8))
    write_labels(lab, tmp_path / "l.pgm")
    assert read_labels(tmp_path / "l.pgm") == lab


def test_image_write_read_on_grid(tmp_path, rng):
    px = rng.integers(0, 256, (3, 4, 3)) / 255.0
    write_image(RgbImage(px), tmp_path / "i.ppm")
    np.testing.assert_array_equal(read_image(tmp_path / "i.ppm").pixels, px)


@settings(max_examples=30, deadline=None)
@given(hnp.arrays(np.uint16, st.tuples(st.integers(1, 4), st.integers(1, 4), st.just(3))),
       st.integers(1, 65535))
def test_read_image_in_unit_range(tmp_path_factory, raw, maxval):
    vals = raw.astype(np.int64) % (maxval + 1)
    p = tmp_path_factory.mktemp("img") / "a.ppm"
    body = " ".join(str(int(v)) for v in vals.reshape(-1))
    p.write_text(f"P3 {vals.shape[1]} {vals.shape[0]} {maxval}\n{body}\n")
    px = read_image(p).pixels
    assert px.min() >= 0.0 and px.max() <= 1.0
