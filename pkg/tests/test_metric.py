import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ergoflow.core import EmpiricalMeasure, Trajectory
from ergoflow.errors import NonInvertibleFlowError, NumericIntegrityError, ShapeError
from ergoflow.flows import (
    AttractorField,
    AttractorFlow,
    ConstantField,
    DuffingField,
    FieldFlow,
    IdentityFlow,
    RotationFlow,
    TranslationFlow,
    VortexField,
    VortexFlow,
    flow_from_field,
    flow_inverse_map,
)
from ergoflow.kernels import KernelParams, kernel_grad_a
from ergoflow.metric import (
    backward_mmd,
    empirical_mmd,
    ergodic_metric,
    ergodic_metric_and_grad,
    ergodic_metric_grad,
    forward_mmd,
    target_self_term,
)

K1 = KernelParams(1.0)


def _instance(seed, T=None, M=None, scale=1.0):
    rng = np.random.default_rng(seed)
    T = T or int(rng.integers(1, 11))
    M = M or int(rng.integers(1, 11))
    G = rng.normal(scale=scale, size=(T, 2))
    mu = EmpiricalMeasure.weighted(rng.normal(scale=scale, size=(M, 2)), rng.uniform(0.2, 1.0, M))
    return G, mu


# -- empirical MMD ------------------------------------------------------------

def test_single_point_pair():
    h = 0.7
    a = np.array([0.1, -0.3])
    b = a + np.array([h, h])  # |a - b| = h * sqrt(2)
    rep = empirical_mmd([a], EmpiricalMeasure.uniform([b]), KernelParams(h))
    assert rep.value == pytest.approx(2 * (1 - math.exp(-1)), abs=1e-12)
    assert rep.value == pytest.approx(1.264241, abs=1e-6)


def test_identical_sets_vanish(rng):
    P = rng.normal(size=(12, 2))
    assert empirical_mmd(P, EmpiricalMeasure.uniform(P), K1).value <= 1e-12


@given(seed=st.integers(0, 10_000))
def test_symmetry_uniform(seed):
    rng = np.random.default_rng(seed)
    X, Y = rng.normal(size=(5, 2)), rng.normal(size=(7, 2))
    a = empirical_mmd(X, EmpiricalMeasure.uniform(Y), K1).value
    b = empirical_mmd(Y, EmpiricalMeasure.uniform(X), K1).value
    assert abs(a - b) <= 1e-14


@given(seed=st.integers(0, 10_000))
def test_nonnegative_and_decomposed(seed):
    G, mu = _instance(seed)
    rep = empirical_mmd(G, mu, KernelParams(0.8))
    assert rep.value >= 0
    assert rep.raw_value >= -1e-10
    assert rep.value == pytest.approx(max(rep.term_traj_traj - 2 * rep.term_cross + rep.term_target_target, 0), abs=1e-15)


def test_dimension_mismatch():
    with pytest.raises(ShapeError):
        empirical_mmd(np.zeros((2, 3)), EmpiricalMeasure.uniform(np.zeros((2, 2))), K1)


def test_weighted_target_matches_duplicated_points():
    Y = np.array([[0.0, 0.0], [1.0, 0.5]])
    w = EmpiricalMeasure.weighted(Y, [1.0, 2.0])
    dup = EmpiricalMeasure.uniform(np.array([Y[0], Y[1], Y[1]]))
    X = np.array([[0.3, 0.2], [-0.4, 1.0]])
    assert empirical_mmd(X, w, K1).value == pytest.approx(empirical_mmd(X, dup, K1).value, abs=1e-15)


def test_large_negative_raises():
    mu = EmpiricalMeasure.uniform([[0.0, 0.0]])
    # Feed a cached target term that is far too small to make the sum go negative.
    with pytest.raises(NumericIntegrityError):
        ergodic_metric_and_grad([[5.0, 5.0]], None, mu, K1, "static", target_term=-5.0)


# -- flow modes ---------------------------------------------------------------

@pytest.mark.parametrize("mode", ["backward", "forward", "static"])
def test_identity_flow_reduces_to_static(mode, rng):
    G = rng.normal(size=(6, 2))
    mu = EmpiricalMeasure.uniform(rng.normal(size=(4, 2)))
    a = ergodic_metric(Trajectory.from_points(G), IdentityFlow(2, 0.1), mu, K1, mode)
    assert a == empirical_mmd(G, mu, K1)


def test_constant_field_rider_pulls_back_to_its_sample():
    flow = flow_from_field(ConstantField([1.0, 0.0]), 1.0)
    w1 = np.array([0.5, -1.0])
    G = w1 + np.stack([np.arange(8.0), np.zeros(8)], axis=1)
    assert backward_mmd(G, flow, EmpiricalMeasure.uniform([w1]), K1).value <= 1e-12


def test_rk4_rider_pulls_back_to_its_sample():
    flow = FieldFlow(DuffingField(), 0.05)
    w1 = np.array([0.4, 0.2])
    from ergoflow.flows import sample_paths

    G = sample_paths(flow, [w1], 30)[:, 0]
    assert backward_mmd(G, flow, EmpiricalMeasure.uniform([w1]), K1).value <= 1e-12


def test_single_step_trajectory(rng):
    mu = EmpiricalMeasure.uniform(rng.normal(size=(5, 2)))
    g0 = rng.normal(size=(1, 2))
    flow = VortexFlow(VortexField(1.0, (0.0, 0.0), "lamb_oseen", 0.5), 0.1)
    ref = empirical_mmd(g0, mu, K1)
    assert backward_mmd(g0, flow, mu, K1) == ref
    assert forward_mmd(g0, flow, mu, K1) == ref


def test_backward_equals_mmd_of_pulled_back_points(rng):
    flow = FieldFlow(DuffingField(), 0.05)
    G = rng.uniform(-1, 1, (7, 2))
    mu = EmpiricalMeasure.uniform(rng.uniform(-1, 1, (5, 2)))
    P = np.array([flow_inverse_map(flow, g, t) for t, g in enumerate(G)])
    assert backward_mmd(G, flow, mu, K1) == empirical_mmd(P, mu, K1)


def test_backward_rejects_non_invertible():
    flow = AttractorFlow(AttractorField([[0.0, 0.0]], 1.0), 0.1)
    mu = EmpiricalMeasure.uniform([[1.0, 1.0]])
    with pytest.raises(NonInvertibleFlowError):
        ergodic_metric([[0.0, 0.0], [1.0, 0.0]], flow, mu, K1, "backward")
    forward = ergodic_metric([[0.0, 0.0], [1.0, 0.0]], flow, mu, K1, "forward")
    assert forward.value >= 0


@pytest.mark.parametrize("seed", range(50))
def test_forward_equals_backward_for_isometries(seed):
    rng = np.random.default_rng(seed)
    G, mu = _instance(seed, scale=1.5)
    flow = RotationFlow(rng.uniform(-3, 3), 0.1, rng.normal(size=2)) if seed % 2 else TranslationFlow(
        rng.normal(size=2), 0.1)
    k = KernelParams(rng.uniform(0.3, 2.0))
    b = backward_mmd(G, flow, mu, k).value
    f = forward_mmd(G, flow, mu, k).value
    assert abs(b - f) <= 1e-10


@given(seed=st.integers(0, 10_000), mode=st.sampled_from(["static", "backward", "forward"]))
def test_drop_constant_shifts_by_target_term(seed, mode):
    G, mu = _instance(seed)
    flow = RotationFlow(0.7, 0.1)
    full = ergodic_metric(G, flow, mu, K1, mode)
    dropped = ergodic_metric(G, flow, mu, K1, mode, drop_constant=True)
    assert dropped.constant_term_dropped and dropped.term_target_target == 0.0
    assert full.raw_value - dropped.value == pytest.approx(full.term_target_target, abs=1e-14)


@given(seed=st.integers(0, 10_000))
def test_drop_constant_preserves_ordering(seed):
    rng = np.random.default_rng(seed)
    mu = EmpiricalMeasure.uniform(rng.normal(size=(5, 2)))
    A, B = rng.normal(size=(6, 2)), rng.normal(size=(6, 2))
    flow = RotationFlow(1.0, 0.1)
    full = [ergodic_metric(X, flow, mu, K1).value for X in (A, B)]
    drop = [ergodic_metric(X, flow, mu, K1, drop_constant=True).value for X in (A, B)]
    if abs(full[0] - full[1]) > 1e-12:
        assert np.argmin(full) == np.argmin(drop)


def test_target_self_term_uniform_single():
    assert target_self_term(EmpiricalMeasure.uniform([[3.0, 4.0]]), K1) == 1.0


# -- gradients -----------------------------------------------------------------

FLOWS = {
    "static": None,
    "backward": FieldFlow(DuffingField(), 0.05),
    "forward": VortexFlow(VortexField(1.3, (0.2, 0.0), "lamb_oseen", 0.8), 0.1),
}


def _fd_grad(G, flow, mu, k, mode, eps=1e-5):
    out = np.zeros_like(G)
    for idx in np.ndindex(G.shape):
        e = np.zeros_like(G)
        e[idx] = eps
        hi = ergodic_metric(G + e, flow, mu, k, mode, drop_constant=True).value
        lo = ergodic_metric(G - e, flow, mu, k, mode, drop_constant=True).value
        out[idx] = (hi - lo) / (2 * eps)
    return out


@pytest.mark.parametrize("mode", ["static", "backward", "forward"])
@pytest.mark.parametrize("seed", range(20))
def test_gradient_matches_central_differences(mode, seed):
    G, mu = _instance(1000 + seed)
    k = KernelParams(0.9)
    g = ergodic_metric_grad(G, FLOWS[mode], mu, k, mode)
    fd = _fd_grad(G, FLOWS[mode], mu, k, mode)
    assert np.linalg.norm(g - fd) <= 1e-4 * max(np.linalg.norm(fd), 1e-8)


def test_gradient_attractor_forward(rng):
    flow = AttractorFlow(AttractorField([[3.0, 0.0], [-3.0, 1.0]], 0.5, stop_radius=0.2), 0.1)
    G = rng.uniform(-1, 1, (6, 2))
    mu = EmpiricalMeasure.uniform(rng.uniform(-2, 2, (5, 2)))
    g = ergodic_metric_grad(G, flow, mu, K1, "forward")
    fd = _fd_grad(G, flow, mu, K1, "forward")
    assert np.linalg.norm(g - fd) <= 1e-4 * np.linalg.norm(fd)


def test_gradient_vanishes_at_matched_pull_back():
    flow = FieldFlow(DuffingField(), 0.05)
    w = np.array([[0.3, 0.1], [-0.2, 0.4], [0.5, -0.5]])
    G = np.array([flow.transport(w[t][None], 0, t)[0] for t in range(3)])
    rep, g = ergodic_metric_and_grad(G, flow, EmpiricalMeasure.uniform(w), K1, "backward")
    assert rep.value <= 1e-12
    assert np.linalg.norm(g) <= 1e-8


def test_static_single_point_gradient():
    g0, w1 = np.array([0.2, -0.1]), np.array([1.0, 0.5])
    g = ergodic_metric_grad([g0], None, EmpiricalMeasure.uniform([w1]), K1, "static")
    expected = 2 * kernel_grad_a(g0, g0, K1) - 2 * kernel_grad_a(g0, w1, K1)
    np.testing.assert_allclose(g[0], expected, atol=1e-15)
    np.testing.assert_allclose(g[0], -2 * kernel_grad_a(g0, w1, K1), atol=1e-15)
