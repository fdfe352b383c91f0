import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ergoflow.core import EmpiricalMeasure, Trajectory, as_points, normalize_weights
from ergoflow.errors import InvalidMeasureError, ShapeError, ValidationError


def test_normalize_examples():
    assert normalize_weights([2, 2]).tolist() == [0.5, 0.5]
    assert normalize_weights([1, 0, 3]).tolist() == [0.25, 0.0, 0.75]


@pytest.mark.parametrize("raw", [[0, 0], [], [1, -1], [1, np.nan], [np.inf, 1]])
def test_normalize_rejects_degenerate(raw):
    with pytest.raises(InvalidMeasureError):
        normalize_weights(raw)


weights = st.lists(st.floats(0, 1e6, allow_nan=False), min_size=1, max_size=30).filter(lambda w: sum(w) > 0)


@given(weights)
def test_normalize_sums_to_one_and_is_idempotent(raw):
    w = normalize_weights(raw)
    assert abs(w.sum() - 1.0) <= 1e-12
    assert np.array_equal(normalize_weights(w), w)


@given(weights)
def test_normalize_preserves_proportions(raw):
    w = normalize_weights(raw)
    r = np.asarray(raw)
    np.testing.assert_allclose(w * r.sum(), r, rtol=1e-12, atol=1e-300)


def test_measure_uniform_and_weighted():
    mu = EmpiricalMeasure.uniform([[0, 0], [1, 1], [2, 2], [3, 3]])
    assert mu.size == 4 and mu.dim == 2
    assert np.all(mu.weights == 0.25)
    nu = EmpiricalMeasure.weighted([[0.0], [1.0]], [1, 3])
    assert nu.weights.tolist() == [0.25, 0.75]


def test_measure_is_read_only():
    mu = EmpiricalMeasure.uniform([[0.0, 0.0], [1.0, 0.0]])
    with pytest.raises(ValueError):
        mu.points[0, 0] = 5.0
    with pytest.raises(ValueError):
        mu.weights[0] = 1.0


def test_measure_rejects_unnormalized_weights():
    with pytest.raises(InvalidMeasureError):
        EmpiricalMeasure(np.zeros((2, 2)), np.array([0.5, 0.6]))


def test_measure_with_points_keeps_weights():
    mu = EmpiricalMeasure.weighted([[0.0, 0.0], [1.0, 0.0]], [0.3, 0.7])
    nu = mu.with_points([[5.0, 5.0], [6.0, 6.0]])
    assert np.array_equal(nu.weights, mu.weights)
    with pytest.raises(ShapeError):
        mu.with_points([[1.0, 2.0]])


def test_as_points_validates():
    assert as_points([1.0, 2.0]).shape == (1, 2)
    with pytest.raises(ShapeError):
        as_points([[1.0, 2.0]], dim=3)
    with pytest.raises(ValidationError):
        as_points([[np.nan, 0.0]])


def test_trajectory_invariants():
    tr = Trajectory.from_points([[0, 0], [1, 0], [2, 0]], dt=0.5)
    assert len(tr) == tr.horizon == 3
    assert tr.times.tolist() == [0.0, 0.5, 1.0]
    with pytest.raises(ValidationError):
        Trajectory(np.zeros((3, 2)), np.zeros((2, 2)), 1.0)
    with pytest.raises(ValidationError):
        Trajectory(np.zeros((3, 2)), np.zeros((3, 2)), 0.0)
