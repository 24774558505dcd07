import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from pseudorefine.par import ParConfig, build_kernel, build_neighbors, par_refine, refine

W3 = 0.01


def kernel_for(px, dilations=(1,), w3=W3):
    cfg = ParConfig(dilations=dilations, w3=w3)
    return build_kernel(px, build_neighbors(px.shape[0], px.shape[1], dilations), cfg)


def test_config_defaults_and_validation():
    cfg = ParConfig()
    assert cfg.dilations == (1, 2, 4, 8, 12, 24)
    assert (cfg.w1, cfg.w2, cfg.w3, cfg.iterations) == (0.3, 0.3, 0.01, 15)
    for bad in (dict(dilations=(1, 1)), dict(dilations=(0,)), dict(iterations=0), dict(sigma_floor=0)):
        with pytest.raises(ValueError):
            ParConfig(**bad)


def test_neighbors_single_pixel():
    assert build_neighbors(1, 1, [1, 2]).neighbors_of(0, 0) == []


def test_neighbors_center_and_corner():
    nb = build_neighbors(3, 3, [1])
    assert len(nb.neighbors_of(1, 1)) == 8
    # enumerate in-bounds offsets of the corner by hand: right, down, diagonal
    assert sorted(nb.neighbors_of(0, 0)) == [(0, 1), (1, 0), (1, 1)]


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 7), st.integers(1, 7), st.lists(st.integers(1, 5), min_size=1, max_size=3, unique=True))
def test_neighbors_match_enumeration(h, w, dil):
    nb = build_neighbors(h, w, dil)
    for i in range(h):
        for j in range(w):
            got = nb.neighbors_of(i, j)
            assert got == oracles.neighbors(h, w, i, j, dil)
            assert (i, j) not in got


def test_constant_image_uniform_kernel():
    # 3x1 column: the middle pixel has two neighbours, both at distance 1
    px = np.full((3, 1, 3), 0.4)
    k = kernel_for(px)
    wts = k.weights[1, 0][k.neighbors.valid[1, 0]]
    np.testing.assert_allclose(wts, [(1 + W3) / 2] * 2, rtol=1e-12)


def test_kernel_hand_evaluation():
    px = np.array([[[0, 0, 0]], [[0, 0, 0]], [[1, 1, 1]]], dtype=np.float64)
    k = kernel_for(px)
    nb = k.neighbors.neighbors_of(1, 0)
    wts = dict(zip(nb, k.weights[1, 0][k.neighbors.valid[1, 0]]))
    # channel diffs [0, 1] -> sigma 0.5 -> logits [0, -(1 / 0.15)^2]; distances equal -> uniform position term
    far = -((1 / (0.3 * 0.5)) ** 2)
    p_near = 1 / (1 + math.exp(far))
    assert wts[(0, 0)] == pytest.approx(p_near + W3 / 2, rel=1e-12)
    assert wts[(2, 0)] == pytest.approx(1 - p_near + W3 / 2, rel=1e-9, abs=1e-15)
    assert wts[(0, 0)] > wts[(2, 0)]


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 9), st.integers(1, 9), st.integers(0, 2**16))
def test_kernel_row_sums(h, w, seed):
    rng = np.random.default_rng(seed)
    k = kernel_for(rng.random((h, w, 3)), dilations=(1, 2, 4))
    sums = k.weights.sum(axis=2)
    has = k.has_neighbors
    np.testing.assert_allclose(sums[has], 1 + W3, atol=1e-5)
    assert not sums[~has].any()


def test_kernel_matches_oracle(rng):
    px = rng.random((4, 5, 3))
    k = kernel_for(px, dilations=(1, 2))
    ref = oracles.par_kernel(px.tolist(), (1, 2), 0.3, 0.3, W3)
    for (i, j), entries in ref.items():
        got = dict(zip(k.neighbors.neighbors_of(i, j), k.weights[i, j][k.neighbors.valid[i, j]]))
        assert len(got) == len(entries)
        for xy, wt in entries:
            assert got[xy] == pytest.approx(wt, rel=1e-9, abs=1e-12)


def test_refine_constant_map():
    px = np.full((3, 1, 3), 0.2)
    k = kernel_for(px)
    out = refine(np.full((3, 1, 1), 0.8), k, 1)
    np.testing.assert_allclose(out[1, 0, 0], 0.8 * (1 + W3), rtol=1e-12)


def test_refine_zero_and_scaling(rng):
    px = rng.random((5, 5, 3))
    k = kernel_for(px, dilations=(1, 2))
    m = rng.random((5, 5, 2))
    assert not refine(np.zeros_like(m), k, 3).any()
    a, b = refine(m, k, 4), refine(2 * m, k, 4)
    np.testing.assert_array_equal(b, 2 * a)
    np.testing.assert_array_equal(a.argmax(axis=2), b.argmax(axis=2))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**16), st.floats(-3, 3), st.floats(-3, 3))
def test_refine_linear(seed, a, b):
    rng = np.random.default_rng(seed)
    px = rng.random((4, 4, 3))
    k = kernel_for(px, dilations=(1, 2))
    m1, m2 = rng.random((4, 4, 2)), rng.random((4, 4, 2))
    np.testing.assert_allclose(refine(a * m1 + b * m2, k, 3), a * refine(m1, k, 3) + b * refine(m2, k, 3), atol=1e-5)


def test_refine_empty_neighbourhood_passthrough():
    k = kernel_for(np.zeros((1, 1, 3)))
    m = np.array([[[0.3, 0.9]]])
    np.testing.assert_array_equal(refine(m, k, 5), m)


def test_refine_w3_zero_flat_image_is_mean(rng):
    px = np.full((4, 4, 3), 0.5)
    k = kernel_for(px, w3=0.0)
    m = rng.random((4, 4, 1))
    out = refine(m, k, 1)
    for i in range(4):
        for j in range(4):
            nb = k.neighbors.neighbors_of(i, j)
            assert out[i, j, 0] == pytest.approx(np.mean([m[p, q, 0] for p, q in nb]), rel=1e-12)


def test_refine_dim_mismatch(rng):
    k = kernel_for(rng.random((3, 3, 3)))
    with pytest.raises(ValueError):
        refine(np.zeros((3, 4, 1)), k, 1)
    with pytest.raises(ValueError):
        build_kernel(rng.random((3, 4, 3)), build_neighbors(3, 3, [1]), ParConfig())


def test_par_refine_wrapper(rng):
    px = rng.random((5, 5, 3))
    m = rng.random((5, 5, 2))
    cfg = ParConfig(dilations=(1, 2), iterations=2)
    k = build_kernel(px, build_neighbors(5, 5, (1, 2)), cfg)
    np.testing.assert_array_equal(par_refine(px, m, cfg), refine(m, k, 2))
