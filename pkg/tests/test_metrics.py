import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from vqasel.metrics import UndefinedCorrelationError, correlations, plcc, srcc

finite = st.floats(-1e3, 1e3, allow_nan=False)


def paired(min_size=3, max_size=30):
    return st.integers(min_size, max_size).flatmap(
        lambda n: st.tuples(st.lists(finite, min_size=n, max_size=n), st.lists(finite, min_size=n, max_size=n)))


def _varied(v):
    return np.ptp(v) > 1e-6 * (1 + np.max(np.abs(v)))


def textbook_pearson(a, b):
    n = len(a)
    ma, mb = sum(a) / n, sum(b) / n
    cov = sum((x - ma) * (y - mb) for x, y in zip(a, b))
    va = sum((x - ma) ** 2 for x in a)
    vb = sum((y - mb) ** 2 for y in b)
    return cov / math.sqrt(va * vb)


@pytest.mark.parametrize("a, b, expected", [
    ([1, 2, 3], [10, 20, 30], 1.0),
    ([1, 2, 3], [3, 2, 1], -1.0),
    ([1, 2, 3, 4], [1, 3, 2, 4], 0.8),
])
def test_srcc_examples(a, b, expected):
    assert srcc(a, b) == pytest.approx(expected, abs=1e-12)


def test_srcc_midranks():
    # ties share the average rank: b ranks (1.5, 1.5, 3, 4)
    expected = textbook_pearson([1, 2, 3, 4], [1.5, 1.5, 3, 4])
    assert srcc([1, 2, 3, 4], [7, 7, 8, 9]) == pytest.approx(expected, abs=1e-12)


def test_plcc_examples():
    a = np.array([0.3, 1.7, 2.2, 5.0])
    assert plcc(a, 2 * a + 1) == pytest.approx(1.0, abs=1e-12)
    assert plcc(a, -a) == pytest.approx(-1.0, abs=1e-12)
    assert plcc([0, 1, 2, 3], [0, 1, 2, 9]) == pytest.approx(textbook_pearson([0, 1, 2, 3], [0, 1, 2, 9]), abs=1e-12)


@pytest.mark.parametrize("fn", [srcc, plcc])
def test_undefined_inputs(fn):
    with pytest.raises(UndefinedCorrelationError):
        fn([1, 1, 1], [1, 2, 3])
    with pytest.raises(UndefinedCorrelationError):
        fn([1], [2])
    with pytest.raises(ValueError):
        fn([1, 2], [1, 2, 3])
    with pytest.raises(ValueError):
        fn([1, np.nan], [1, 2])


@given(paired())
def test_symmetric_and_bounded(ab):
    a, b = map(np.array, ab)
    assume(_varied(a) and _varied(b))
    for fn in (srcc, plcc):
        v = fn(a, b)
        assert abs(v) <= 1 + 1e-12
        assert v == pytest.approx(fn(b, a), abs=1e-12)


@given(paired())
def test_srcc_invariant_under_increasing_transform(ab):
    a, b = map(np.array, ab)
    assume(_varied(a) and _varied(b))
    # strictly increasing by construction: cube of the position among distinct values
    t = np.exp(np.searchsorted(np.unique(a), a) / 3.0) ** 3
    assert srcc(t, b) == pytest.approx(srcc(a, b), abs=1e-12)


@given(paired(), st.floats(0.1, 10), st.floats(-10, 10))
def test_plcc_invariant_under_positive_affine(ab, scale, shift):
    a, b = map(np.array, ab)
    assume(_varied(a) and _varied(b))
    assert plcc(scale * a + shift, b) == pytest.approx(plcc(a, b), abs=1e-9)


def test_correlations_pair():
    assert correlations([1, 2, 3], [2, 4, 7]) == (srcc([1, 2, 3], [2, 4, 7]), plcc([1, 2, 3], [2, 4, 7]))
