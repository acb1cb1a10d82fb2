import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from radprompt.metrics import compute_metrics, rank_auc, roc_curve, trapezoid_auc


def onehot(pred, n=3):
    return np.eye(n)[pred]


def test_perfect_predictions():
    y = [0, 1, 2, 0]
    m = compute_metrics(y, onehot(y))
    assert m.accuracy == 1.0 and m.recall == [1.0] * 3 and m.precision == [1.0] * 3 and m.f1 == [1.0] * 3
    assert m.ovr_auc == [1.0] * 3


def test_counts_example():
    # class 0: TP = 3, FP = 1, FN = 1
    y = [0, 0, 0, 0, 1, 1]
    pred = [0, 0, 0, 1, 0, 1]
    m = compute_metrics(y, onehot(pred, 2))
    assert m.precision[0] == 0.75 and m.recall[0] == 0.75 and m.f1[0] == 0.75
    assert m.confusion == [[3, 1], [1, 1]]


def test_zero_support_class():
    m = compute_metrics([0, 1, 0], onehot([0, 1, 1]))
    assert m.support == [2, 1, 0]
    assert m.recall[2] == 0.0 and m.precision[2] == 0.0 and m.f1[2] == 0.0
    assert m.to_dict()["support_zero"] == [False, False, True]
    assert m.ovr_auc[2] == 0.5


def test_rejects_bad_probabilities():
    with pytest.raises(ValueError, match="row 1"):
        compute_metrics([0, 1], np.array([[1.0, 0.0], [0.7, 0.7]]))
    with pytest.raises(ValueError):
        compute_metrics([0, 3], onehot([0, 1]))


def test_roc_with_ties():
    is_pos = np.array([True, False, True, False])
    s = np.array([0.5, 0.5, 0.9, 0.1])
    pts = roc_curve(is_pos, s)
    assert [p[:2] for p in pts] == [(0.0, 0.0), (0.0, 0.5), (0.5, 1.0), (1.0, 1.0)]
    assert trapezoid_auc(pts) == rank_auc(is_pos, s) == 0.875


@settings(max_examples=60, deadline=None)
@given(st.integers(3, 40), st.integers(0, 2**32 - 1))
def test_auc_forms_agree_and_shuffle_invariance(n, seed):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 3, size=n)
    P = rng.dirichlet(np.ones(3), size=n)
    P = np.round(P, 1)  # encourage ties
    P /= P.sum(axis=1, keepdims=True)
    m = compute_metrics(y, P, n_classes=3)
    for c in range(3):
        assert abs(trapezoid_auc(m.roc_points[c]) - m.ovr_auc[c]) <= 1e-9 or (y == c).all() or (y != c).all()
    perm = rng.permutation(n)
    m2 = compute_metrics(y[perm], P[perm], n_classes=3)
    assert m2.accuracy == m.accuracy and m2.recall == m.recall and m2.ovr_auc == m.ovr_auc
    weighted = sum(r * s for r, s in zip(m.recall, m.support)) / n
    assert abs(weighted - m.accuracy) <= 1e-12


def test_roc_csv(tmp_path):
    m = compute_metrics([0, 1, 1], np.array([[0.8, 0.2], [0.3, 0.7], [0.6, 0.4]]), class_names=["a", "b"])
    text = m.write_roc_csv(tmp_path / "roc.csv").read_text().splitlines()
    assert text[0] == "class,fpr,tpr,threshold" and text[1] == "a,0.0,0.0,inf"
