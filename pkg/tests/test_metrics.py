import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import definitional_metrics
from spectral_rocket import metrics
from spectral_rocket.metrics import average_accuracy, confusion, macro_f1, mean_iou, overall_accuracy


def test_confusion_diagonal():
    cm = confusion([0, 1, 2, 2], [0, 1, 2, 2], 3)
    assert cm.tolist() == [[1, 0, 0], [0, 1, 0], [0, 0, 2]]


def test_confusion_single_error():
    assert confusion([0], [1], 2)[1, 0] == 1


def test_confusion_length_mismatch():
    with pytest.raises(ValueError):
        confusion([0, 1], [0], 2)


def test_row_sums_are_label_histogram():
    rng = np.random.default_rng(0)
    labels, preds = rng.integers(0, 7, 500), rng.integers(0, 7, 500)
    hist = [int((labels == c).sum()) for c in range(7)]
    assert confusion(preds, labels, 7).sum(axis=1).tolist() == hist


def test_hand_computed_example():
    cm = np.array([[2, 0], [1, 1]])
    assert overall_accuracy(cm) == 0.75
    assert average_accuracy(cm) == 0.75
    assert macro_f1(cm) == pytest.approx(0.7333333333, abs=1e-9)
    assert mean_iou(cm) == pytest.approx(0.5833333333, abs=1e-9)


def test_perfect():
    assert set(metrics.summary(np.diag([3, 5, 1])).values()) == {1.0}


def test_empty_matrix():
    with pytest.raises(ValueError):
        overall_accuracy(np.zeros((3, 3), dtype=int))


def test_absent_class_excluded():
    cm = np.array([[4, 0, 0], [0, 0, 0], [0, 0, 2]])
    assert average_accuracy(cm) == 1.0 and mean_iou(cm) == 1.0 and macro_f1(cm) == 1.0


def test_predicted_only_class_counts_as_zero():
    cm = np.array([[3, 1], [0, 0]])
    assert average_accuracy(cm) == pytest.approx(0.375)
    assert mean_iou(cm) == pytest.approx(0.375)


def test_random_predictions_oa():
    rng = np.random.default_rng(42)
    labels = np.repeat([0, 1], 10_000)
    cm = confusion(rng.integers(0, 2, labels.size), labels, 2)
    assert abs(overall_accuracy(cm) - 0.5) <= 0.02


def test_symmetric_balanced_oa_equals_aa():
    cm = np.array([[8, 1, 1], [1, 8, 1], [1, 1, 8]])
    assert overall_accuracy(cm) == pytest.approx(average_accuracy(cm))


def test_per_class_accuracy_nan_for_missing():
    acc = metrics.per_class_accuracy(np.array([[1, 1], [0, 0]]))
    assert acc[0] == 0.5 and np.isnan(acc[1])


cms = st.integers(1, 12).flatmap(
    lambda c: st.lists(st.lists(st.integers(0, 50), min_size=c, max_size=c), min_size=c, max_size=c)
).filter(lambda m: sum(map(sum, m)) > 0)


@settings(max_examples=200, deadline=None)
@given(cms)
def test_against_definitions(cm):
    ref = definitional_metrics(cm)
    got = (overall_accuracy(cm), average_accuracy(cm), macro_f1(cm), mean_iou(cm))
    assert np.allclose(got, ref, rtol=0, atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(cms)
def test_iou_bounded_by_f1(cm):
    cm = np.array(cm)
    assert np.all(metrics.per_class_iou(cm) <= metrics.per_class_f1(cm) + 1e-15)
    assert 0 <= mean_iou(cm) <= macro_f1(cm) + 1e-15 <= 1 + 1e-15


@settings(max_examples=100, deadline=None)
@given(cms, st.randoms(use_true_random=False))
def test_class_permutation_invariance(cm, rnd):
    cm = np.array(cm)
    perm = list(range(len(cm)))
    rnd.shuffle(perm)
    pcm = cm[np.ix_(perm, perm)]
    assert np.allclose(list(metrics.summary(pcm).values()), list(metrics.summary(cm).values()), atol=1e-12)
    assert np.allclose(metrics.per_class_iou(pcm), metrics.per_class_iou(cm)[perm])
