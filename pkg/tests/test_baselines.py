import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ergoflow.baselines import InfoMaxConfig, _candidates, infomax_objective, infomax_plan
from ergoflow.core import EmpiricalMeasure, Trajectory
from ergoflow.dynamics import DynamicsModel, rollout
from ergoflow.errors import ValidationError
from ergoflow.flows import IdentityFlow, RotationFlow, TranslationFlow, sample_paths
from ergoflow.kernels import KernelParams
from ergoflow.planner import ErgodicProblem, optimize, zero_flow_problem
from ergoflow.scenarios import coverage_fraction

CFG = InfoMaxConfig(0.2)


def test_config_validation():
    for bad in ({"sensing_radius": 0.0}, {"sensing_radius": 1.0, "revisit_discount": 1.5},
                {"sensing_radius": 1.0, "greedy_horizon": 0}):
        with pytest.raises(ValidationError):
            InfoMaxConfig(**bad)


def test_objective_no_coverage():
    mu = EmpiricalMeasure.uniform([[5.0, 5.0], [-5.0, 5.0]])
    traj = Trajectory.from_points([[0.0, 0.0], [0.1, 0.0]])
    assert infomax_objective(traj, IdentityFlow(2, 0.1), mu, CFG) == 0.0


def test_objective_single_capture():
    mu = EmpiricalMeasure.weighted([[1.0, 0.0], [9.0, 9.0]], [0.25, 0.75])
    G = [[0.0, 0.0], [1.0, 0.1], [2.0, 0.0]]
    assert infomax_objective(G, IdentityFlow(2, 0.1), mu, CFG) == 0.25


def test_objective_revisits():
    mu = EmpiricalMeasure.uniform([[0.0, 0.0]])
    G = [[0.0, 0.0], [0.05, 0.0], [0.0, 0.05]]
    assert infomax_objective(G, IdentityFlow(2, 0.1), mu, InfoMaxConfig(0.2, revisit_discount=0.0)) == 1.0
    assert infomax_objective(G, IdentityFlow(2, 0.1), mu, InfoMaxConfig(0.2, revisit_discount=0.1)) == pytest.approx(1.2)


def test_objective_tracks_moving_samples():
    flow = TranslationFlow([1.0, 0.0], 0.1)
    mu = EmpiricalMeasure.uniform([[0.0, 0.0]])
    rider = [[0.0, 1.0], [0.1, 1.0], [0.2, 0.0]]
    assert infomax_objective(rider, flow, mu, CFG) == 1.0
    assert infomax_objective([[0.0, 1.0], [0.1, 1.0], [-0.2, 0.0]], flow, mu, CFG) == 0.0


@given(seed=st.integers(0, 1000), extra=st.integers(1, 5))
def test_objective_monotone_in_captures(seed, extra):
    rng = np.random.default_rng(seed)
    mu = EmpiricalMeasure.uniform(rng.uniform(-1, 1, (8, 2)))
    G = rng.uniform(-1, 1, (6, 2))
    flow = IdentityFlow(2, 0.1)
    longer = np.concatenate([G, rng.uniform(-1, 1, (extra, 2))])
    assert infomax_objective(longer, flow, mu, CFG) >= infomax_objective(G, flow, mu, CFG)


def test_candidate_set_shape_and_bounds():
    box = np.array([[-0.5, 0.5], [-0.2, 0.3]])
    c = _candidates(box)
    assert c.shape == (9, 2)
    assert c[0].tolist() == [0.0, 0.0]
    assert np.all(c >= box[:, 0]) and np.all(c <= box[:, 1])
    np.testing.assert_allclose(c[1], [0.5, 0.0])


def _problem(flow, bound, target, x0=(0.0, 0.0), T=30, dt=0.1):
    dyn = DynamicsModel.box("single_integrator", dt, bound, drift_coupled=not isinstance(flow, IdentityFlow),
                            drift_integrator="flow", drift_flow=flow)
    return ErgodicProblem(dyn, flow, target, KernelParams(0.3), T, x0)


def test_reaches_single_stationary_sample():
    # Within the greedy lookahead: 5 steps at 0.1 s and 1 m/s plus the radius.
    mu = EmpiricalMeasure.uniform([[0.4, 0.3]])
    prob = _problem(IdentityFlow(2, 0.1), 1.0, mu)
    sol = infomax_plan(prob, CFG)
    assert infomax_objective(sol.trajectory, prob.flow, mu, CFG) >= 1.0
    assert sol.planner == "infomax" and sol.converged


def test_zero_bound_is_pure_drift():
    flow = RotationFlow(1.0, 0.1)
    prob = _problem(flow, 0.0, EmpiricalMeasure.uniform([[1.0, 1.0]]), x0=(1.0, 0.0))
    sol = infomax_plan(prob, CFG)
    assert not np.any(sol.controls)
    np.testing.assert_allclose(sol.trajectory.projected, sample_paths(flow, [[1.0, 0.0]], 30)[:, 0], atol=1e-12)


def test_zero_weights_tie_to_first_candidate():
    # Only the out-of-reach sample carries weight, so every candidate scores 0.
    mu = EmpiricalMeasure(np.array([[9.0, 9.0], [0.2, 0.2]]), np.array([1.0, 0.0]))
    sol = infomax_plan(_problem(IdentityFlow(2, 0.1), 1.0, mu, T=6), CFG)
    assert not np.any(sol.controls)


def test_out_of_reach_sample_leaves_greedy_idle():
    mu = EmpiricalMeasure.uniform([[3.0, 0.0]])
    sol = infomax_plan(_problem(IdentityFlow(2, 0.1), 1.0, mu, T=10), CFG)
    assert not np.any(sol.controls)


@given(seed=st.integers(0, 200))
def test_controls_respect_bounds(seed):
    rng = np.random.default_rng(seed)
    mu = EmpiricalMeasure.uniform(rng.uniform(-1, 1, (6, 2)))
    prob = _problem(RotationFlow(0.5, 0.1), 0.4, mu, T=12)
    sol = infomax_plan(prob, CFG)
    assert np.all(np.abs(sol.controls) <= 0.4)
    np.testing.assert_array_equal(sol.trajectory.states, rollout(prob.dynamics, prob.x0, sol.controls).states)
    assert np.all(np.diff(sol.objective_history) <= 0)


def test_parity_with_ergodic_planner_on_single_sample():
    mu = EmpiricalMeasure.uniform([[0.4, -0.3]])
    dyn = DynamicsModel.box("single_integrator", 0.1, 1.0)
    prob = zero_flow_problem(dyn, mu, KernelParams(0.3), 20, [0, 0])
    for sol in (infomax_plan(prob, CFG), optimize(prob, seed=0)):
        assert coverage_fraction(sol.trajectory, mu, prob.flow, 0.2) == 1.0
