import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from babymamba_har import metrics as mt
from babymamba_har.errors import ContractError


def test_confusion_matrix_layout():
    cm = mt.confusion_matrix([0, 0, 1, 2], [0, 1, 1, 0], 3)
    assert cm.tolist() == [[1, 1, 0], [0, 1, 0], [1, 0, 0]]


def test_macro_f1_hand_example():
    cm = mt.confusion_matrix([0, 0, 1, 1], [0, 1, 1, 1], 2)
    np.testing.assert_allclose(mt.per_class_f1(cm), [2 / 3, 0.8])
    assert mt.macro_f1(cm) == pytest.approx(0.733333, abs=1e-6)


def test_macro_f1_perfect_and_absent_class():
    assert mt.macro_f1(np.diag([3, 4, 5])) == 1.0
    # class 2 never occurs and is never predicted: contributes 0
    cm = mt.confusion_matrix([0, 1], [0, 1], 3)
    assert mt.per_class_f1(cm)[2] == 0.0
    assert mt.macro_f1(cm) == pytest.approx(2 / 3)


def test_macro_f1_contracts():
    with pytest.raises(ContractError):
        mt.macro_f1(np.zeros((2, 2)))
    with pytest.raises(ContractError):
        mt.macro_f1(np.ones((1, 1)))
    with pytest.raises(ContractError):
        mt.confusion_matrix([0, 1], [0], 2)


def test_aggregate_seeds():
    assert mt.aggregate_seeds([1, 1, 1, 1, 1]) == (1.0, 0.0)
    mean, std = mt.aggregate_seeds([0, 1])
    assert mean == 0.5 and std == pytest.approx(math.sqrt(0.5))
    assert mt.aggregate_seeds([0.7]) == (0.7, 0.0)
    with pytest.raises(ContractError):
        mt.aggregate_seeds([])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=2, max_size=8), st.randoms())
def test_aggregate_permutation_invariant(vals, r):
    shuffled = list(vals)
    r.shuffle(shuffled)
    a, b = mt.aggregate_seeds(vals), mt.aggregate_seeds(shuffled)
    assert a[0] == pytest.approx(b[0], abs=1e-12) and a[1] == pytest.approx(b[1], abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=40))
def test_macro_f1_bounds_and_balanced_accuracy(pairs):
    y, p = zip(*pairs)
    cm = mt.confusion_matrix(y, p, 4)
    f1 = mt.macro_f1(cm)
    assert 0.0 <= f1 <= 1.0
    assert 0.0 <= mt.balanced_accuracy(cm) <= 1.0
    if list(y) == list(p):
        assert mt.balanced_accuracy(cm) == 1.0


def test_hashes_are_stable():
    assert mt.config_hash({"b": 1, "a": [1, 2]}) == mt.config_hash({"a": [1, 2], "b": 1})
    # git hash-object of "hello\n"
    assert mt.content_hash(b"hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a"


def test_results_record():
    rec = mt.results_record([0, 1, 1], [0, 1, 0], 2, seed=3)
    assert rec["seed"] == 3
    assert rec["confusion_matrix"] == [[1, 0], [1, 1]]
    assert rec["macro_f1"] == pytest.approx(np.mean(rec["per_class_f1"]))


def test_macro_f1_relabel_invariant(rng):
    y, p = rng.integers(0, 4, 60), rng.integers(0, 4, 60)
    perm = rng.permutation(4)
    a = mt.macro_f1(mt.confusion_matrix(y, p, 4))
    b = mt.macro_f1(mt.confusion_matrix(perm[y], perm[p], 4))
    assert a == pytest.approx(b, abs=1e-15)


@pytest.mark.parametrize("K", [2, 3, 6])
def test_collapsed_predictor_scores_below_balanced_accuracy(K):
    y = np.repeat(np.arange(K), 10)
    cm = mt.confusion_matrix(y, np.zeros_like(y), K)
    assert mt.macro_f1(cm) < mt.balanced_accuracy(cm)
