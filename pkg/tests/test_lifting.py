import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from diskoop.lifting import (LiftingDictionary, eval_tps, identity_dictionary,
                             lift, lift_states, sample_dictionary)

finite = st.floats(-10, 10, allow_nan=False)


def test_tps_at_center_is_zero():
    assert eval_tps(np.array([0.3, 0.7]), np.array([0.3, 0.7])) == 0.0


def test_tps_unit_distance_is_zero():
    assert eval_tps(np.array([1.0, 0.0]), np.zeros(2)) == 0.0


def test_tps_distance_two():
    assert eval_tps(np.array([2.0, 0.0]), np.zeros(2)) == pytest.approx(
        4 * math.log(2), rel=1e-15)
    assert eval_tps(np.array([2.0, 0.0]), np.zeros(2)) == pytest.approx(
        2.772589, abs=1e-6)


def test_tps_dimension_mismatch():
    with pytest.raises(ValueError):
        eval_tps(np.zeros(2), np.zeros(3))


@pytest.mark.parametrize('dist', [1e-8, 1e-6])
def test_tps_continuous_near_center(dist):
    r = np.array([0.5, 0.5])
    x = r + dist * np.array([0.6, 0.8])
    assert abs(eval_tps(x, r)) < 1e-10


@given(arrays(float, 3, elements=finite), arrays(float, 3, elements=finite))
def test_tps_matches_formula(x, r):
    d = float(np.linalg.norm(x - r))
    expected = 0.0 if d == 0 else d * d * math.log(d)
    assert eval_tps(x, r) == pytest.approx(expected, rel=1e-12, abs=1e-300)


def test_lift_identity_dictionary():
    x = np.array([0.25, -3.0])
    np.testing.assert_array_equal(lift(identity_dictionary(2), x), x)


def test_lift_single_center():
    d = LiftingDictionary(2, np.zeros((1, 2)))
    np.testing.assert_array_equal(lift(d, np.array([1.0, 0.0])), [1, 0, 0])


def test_lift_order_and_length():
    d = sample_dictionary(2, 8, seed=3)
    x = np.array([0.1, 0.9])
    psi = lift(d, x)
    assert psi.shape == (10, )
    expected = [eval_tps(x, r) for r in d.centers]
    np.testing.assert_allclose(psi[2:], expected, rtol=1e-14)


def test_lift_without_state():
    d = LiftingDictionary(2, np.array([[0.0, 0.0], [1.0, 1.0]]),
                          include_state=False)
    assert d.lifted_dim == 2
    assert lift(d, np.array([2.0, 0.0]))[0] == pytest.approx(4 * math.log(2))


def test_lift_batch_matches_single():
    d = sample_dictionary(2, 5, seed=0)
    X = np.random.default_rng(1).normal(size=(7, 2))
    batch = lift(d, X)
    for k in range(7):
        np.testing.assert_allclose(batch[k], lift(d, X[k]), rtol=1e-14)
    np.testing.assert_allclose(lift_states(d, X), batch.T)


def test_lift_dimension_mismatch():
    with pytest.raises(ValueError):
        lift(sample_dictionary(2, 3, seed=0), np.zeros(3))


@given(arrays(float, 2, elements=finite), st.integers(0, 6),
       st.integers(0, 2**32 - 1))
@settings(max_examples=50)
def test_lift_prefix_is_state(x, K, seed):
    psi = lift(sample_dictionary(2, K, seed=seed), x)
    np.testing.assert_array_equal(psi[:2], x)


def test_sample_zero_centers_is_identity():
    d = sample_dictionary(3, 0, seed=5)
    assert d.lifted_dim == 3
    assert d == identity_dictionary(3)


def test_sample_deterministic():
    a = sample_dictionary(2, 8, seed=11)
    b = sample_dictionary(2, 8, seed=11)
    assert a == b
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())
    assert sample_dictionary(2, 8, seed=12) != a


def test_sample_unit_box():
    d = sample_dictionary(2, 8, seed=0)
    assert d.centers.shape == (8, 2)
    assert np.all((d.centers >= 0) & (d.centers <= 1))
    assert d.rng['seed'] == 0 and 'algorithm' in d.rng


def test_sample_custom_box():
    d = sample_dictionary(2, 50, seed=0, box=(-2.0, -1.0))
    assert np.all((d.centers >= -2) & (d.centers <= -1))


@pytest.mark.parametrize('n,K', [(0, 2), (2, -1)])
def test_sample_invalid(n, K):
    with pytest.raises(ValueError):
        sample_dictionary(n, K, seed=0)


def test_duplicate_centers_rejected():
    with pytest.raises(ValueError, match='distinct'):
        LiftingDictionary(2, np.array([[0.1, 0.2], [0.1, 0.2]]))


def test_center_length_checked():
    with pytest.raises(ValueError):
        LiftingDictionary(2, np.zeros((2, 3)))


def test_dictionary_round_trip():
    d = sample_dictionary(2, 8, seed=7)
    back = LiftingDictionary.from_dict(json.loads(json.dumps(d.to_dict())))
    assert back == d
    np.testing.assert_array_equal(back.centers, d.centers)


def test_dictionary_immutable():
    d = sample_dictionary(2, 2, seed=0)
    with pytest.raises(ValueError):
        d.centers[0, 0] = 5.0
