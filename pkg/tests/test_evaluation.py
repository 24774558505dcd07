import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

import oracles
from pseudorefine.evaluation import ConfusionMatrix, accumulate, class_names, format_report, miou


def test_perfect_prediction(rng):
    t = rng.integers(0, 2, (3, 3))
    t[0, 0], t[0, 1] = 0, 1
    cm = accumulate(t, t, ConfusionMatrix(2))
    assert cm.counts[0, 1] == cm.counts[1, 0] == 0
    per, mean = miou(cm)
    assert per.tolist() == [1.0, 1.0] and mean == 1.0


def test_all_ignore_unchanged():
    cm = ConfusionMatrix(3, np.arange(9).reshape(3, 3))
    out = accumulate(np.zeros((2, 2)), np.full((2, 2), 255), cm)
    np.testing.assert_array_equal(out.counts, cm.counts)


def test_hand_tally():
    truth = np.array([[0, 1], [1, 255]])
    pred = np.array([[0, 0], [1, 1]])
    cm = accumulate(pred, truth, ConfusionMatrix(2))
    # rows are truth, columns prediction; the ignore pixel is skipped
    assert cm.counts.tolist() == [[1, 0], [1, 1]]
    assert cm.total == 3


def test_disjoint_class():
    per, _ = miou(accumulate(np.array([[1, 1]]), np.array([[0, 0]]), ConfusionMatrix(2)))
    assert per[0] == 0.0 and per[1] == 0.0


def test_four_pixel_case():
    per, mean = miou(accumulate(np.array([[0, 1, 1, 1]]), np.array([[0, 0, 1, 1]]), ConfusionMatrix(2)))
    assert per[0] == 1 / 2 and per[1] == 2 / 3
    assert mean == pytest.approx(7 / 12, rel=1e-15)


def test_zero_union_excluded():
    per, mean = miou(accumulate(np.array([[0, 0]]), np.array([[0, 0]]), ConfusionMatrix(3)))
    assert np.isnan(per[1]) and np.isnan(per[2]) and mean == 1.0


def test_errors():
    with pytest.raises(ValueError):
        miou(ConfusionMatrix(2))
    with pytest.raises(ValueError):
        accumulate(np.zeros((2, 2)), np.zeros((2, 3)), ConfusionMatrix(2))
    with pytest.raises(ValueError):
        accumulate(np.array([[2]]), np.array([[0]]), ConfusionMatrix(2))


labels = hnp.arrays(np.int64, (3, 3), elements=st.integers(0, 3))


@settings(max_examples=50, deadline=None)
@given(labels, labels, st.permutations(range(4)))
def test_class_permutation(pred, truth, perm):
    perm = np.array(perm)
    per, _ = miou(accumulate(pred, truth, ConfusionMatrix(4)))
    per_p, _ = miou(accumulate(perm[pred], perm[truth], ConfusionMatrix(4)))
    np.testing.assert_array_equal(per_p[perm], per)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(labels, labels), min_size=1, max_size=4), st.randoms())
def test_accumulation_order(pairs, rnd):
    a = ConfusionMatrix(4)
    for p, t in pairs:
        a = accumulate(p, t, a)
    shuffled = list(pairs)
    rnd.shuffle(shuffled)
    b = ConfusionMatrix(4)
    for p, t in shuffled:
        b = accumulate(p, t, b)
    np.testing.assert_array_equal(a.counts, b.counts)
    parts = [accumulate(p, t, ConfusionMatrix(4)) for p, t in pairs]
    np.testing.assert_array_equal(sum(parts[1:], parts[0]).counts, a.counts)


@settings(max_examples=30, deadline=None)
@given(labels, labels)
def test_matches_set_oracle(pred, truth):
    per, _ = miou(accumulate(pred, truth, ConfusionMatrix(4)))
    ref = oracles.iou_by_sets(pred.tolist(), truth.tolist(), 4)
    assert [None if np.isnan(v) else v for v in per] == ref


def test_report_layout():
    text = format_report(np.array([0.5, np.nan]), 0.5)
    assert text.splitlines() == ["class_0=50.00", "class_1=nan", "miou=50.00"]
    assert class_names(21)[0] == "bkg" and class_names(21)[-1] == "tv"
