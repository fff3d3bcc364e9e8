import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from causalcal.data import Dataset, split_folds
from causalcal.errors import DataError, InvalidArgumentError
from causalcal.rng import derive_stream


def _seed(k=0):
    return derive_stream(123, k)


def test_divisible_fold_sizes():
    fa = split_folds(100, 5, _seed())
    assert fa.sizes() == [20] * 5


def test_remainder_fold_sizes():
    fa = split_folds(7, 3, _seed())
    assert sorted(fa.sizes(), reverse=True) == [3, 2, 2]


def test_singleton_folds_are_a_permutation():
    fa = split_folds(10, 10, _seed())
    assert fa.sizes() == [1] * 10
    assert sorted(fa.fold_of.tolist()) == list(range(10))


def test_invalid_fold_counts():
    with pytest.raises(InvalidArgumentError):
        split_folds(5, 0, _seed())
    with pytest.raises(InvalidArgumentError):
        split_folds(5, 6, _seed())


def test_split_deterministic_and_seed_sensitive():
    a = split_folds(50, 4, _seed(1)).fold_of
    b = split_folds(50, 4, _seed(1)).fold_of
    c = split_folds(50, 4, _seed(2)).fold_of
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 60), st.data())
def test_folds_partition_every_index(n, data):
    K = data.draw(st.integers(1, n))
    fa = split_folds(n, K, _seed(7))
    for k in range(K):
        assert np.all(fa.fold_of[fa.indices(k)] == k)
    assert sum(fa.sizes()) == n
    assert max(fa.sizes()) - min(fa.sizes()) <= 1


def _tiny(**kw):
    defaults = dict(X=[[0.0], [1.0]], a=[0.0, 1.0], y=[1.0, 2.0])
    defaults.update(kw)
    return Dataset(**defaults)


def test_binary_treatment_validated():
    with pytest.raises(DataError):
        _tiny(a=[0.0, 2.0])


def test_continuous_treatment_range():
    _tiny(a=[0.0, 0.5], treatment_kind="continuous")
    with pytest.raises(DataError):
        _tiny(a=[0.0, 1.5], treatment_kind="continuous")


def test_nonfinite_rejected():
    with pytest.raises(DataError):
        _tiny(y=[np.nan, 1.0])
    with pytest.raises(DataError):
        _tiny(X=[[np.inf], [0.0]])


def test_subset_and_row():
    ds = Dataset([[0.0], [1.0], [2.0]], [0, 1, 0], [5.0, 6.0, 7.0], d=[1, 0, 1])
    sub = ds.subset(np.array([2, 0]))
    assert len(sub) == 2
    assert sub.y.tolist() == [7.0, 5.0]
    obs = sub.row(0)
    assert obs.y == 7.0 and obs.d == 1.0


def test_with_base_and_require_base():
    ds = _tiny()
    with pytest.raises(InvalidArgumentError):
        ds.require_base()
    ds2 = ds.with_base([0.1, 0.2])
    assert ds2.require_base().tolist() == [0.1, 0.2]


def test_arrays_are_frozen():
    ds = _tiny()
    with pytest.raises(ValueError):
        ds.y[0] = 9.0
