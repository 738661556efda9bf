import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cganeb.metrics import evaluate


def test_mae_example():
    assert evaluate([1, 2], [1, 4]).mae == 1.0


def test_perfect_prediction():
    r = evaluate([1, 3, 5], [1, 3, 5])
    assert (r.mae, r.mape, r.r2) == (0.0, 0.0, 1.0)


def test_zero_counts_excluded_from_mape():
    r = evaluate([0, 2], [1, 1])
    assert r.mape == 0.5 and r.n_excluded == 1 and r.n_used == 1


def test_undefined_markers():
    assert np.isnan(evaluate([0, 0], [1, 2]).mape)
    assert np.isnan(evaluate([3, 3], [1, 2]).r2)


def test_constant_mean_predictor_r2_zero():
    y = np.array([1.0, 4.0, 2.0, 9.0])
    assert evaluate(y, np.full(4, y.mean())).r2 == pytest.approx(0.0, abs=1e-15)


def test_input_checks():
    with pytest.raises(ValueError):
        evaluate([1], [1])
    with pytest.raises(ValueError):
        evaluate([1, 2], [1, 2, 3])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.one_of(st.just(0.0), st.floats(0.01, 100)), st.floats(0, 100)),
                min_size=2, max_size=30),
       st.floats(-50, 50))
def test_mae_translation_invariant(pairs, shift):
    y, p = np.array(pairs).T
    a, b = evaluate(y, p), evaluate(y + shift, p + shift)
    assert a.mae == pytest.approx(b.mae, abs=1e-9)
    assert a.mae >= 0
    if np.isfinite(a.r2):
        assert a.r2 <= 1.0
