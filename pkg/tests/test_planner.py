from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ergoflow.core import EmpiricalMeasure
from ergoflow.dynamics import DynamicsModel, rollout
from ergoflow.errors import InitializationError, NonInvertibleFlowError, ValidationError
from ergoflow.flows import AttractorField, AttractorFlow, DuffingField, FieldFlow, RotationFlow
from ergoflow.kernels import KernelParams
from ergoflow.metric import empirical_mmd, ergodic_metric
from ergoflow.planner import (
    ErgodicProblem,
    objective,
    optimize,
    optimize_continuation,
    project_controls,
    zero_flow_problem,
)

BOX = np.array([[-0.5, 0.5], [-0.5, 0.5]])


def _rotation_problem(seed=7, T=25, **kw):
    rng = np.random.default_rng(seed)
    mu = EmpiricalMeasure.uniform(rng.uniform(-1, 1, (12, 2)))
    flow = RotationFlow(0.8, 0.1)
    dyn = DynamicsModel.box("single_integrator", 0.1, 1.0, drift_coupled=True, drift_integrator="flow",
                            drift_flow=flow)
    return ErgodicProblem(dyn, flow, mu, KernelParams(0.4), T, [0, 0], **kw)


# -- projection ---------------------------------------------------------------

def test_projection_examples():
    U = np.array([[0.1, -0.2], [0.5, -0.5]])
    assert np.array_equal(project_controls(U, BOX), U)
    assert project_controls([[0.9, -0.9]], BOX).tolist() == [[0.5, -0.5]]


@given(st.lists(st.tuples(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6)), min_size=1, max_size=20))
def test_projection_idempotent_and_feasible(rows):
    U = np.array(rows)
    P = project_controls(U, BOX)
    assert np.array_equal(project_controls(P, BOX), P)
    assert np.all(P >= -0.5) and np.all(P <= 0.5)


# -- problem and objective -------------------------------------------------------

def test_problem_validation():
    dyn = DynamicsModel.box("single_integrator", 0.1, 1.0)
    mu = EmpiricalMeasure.uniform([[0.0, 0.0]])
    with pytest.raises(ValidationError):
        zero_flow_problem(dyn, mu, KernelParams(1.0), 1, [0, 0])
    with pytest.raises(ValidationError):
        zero_flow_problem(dyn, mu, KernelParams(1.0), 5, [0, 0], control_reg=-1.0)
    with pytest.raises(NonInvertibleFlowError):
        ErgodicProblem(dyn, AttractorFlow(AttractorField([[0, 0]], 1.0), 0.1), mu, KernelParams(1.0), 5, [0, 0])


def test_objective_at_matched_pull_back_is_zero():
    flow = FieldFlow(DuffingField(), 0.05)
    dyn = DynamicsModel.box("single_integrator", 0.05, 1.0, drift_coupled=True, drift_integrator="flow",
                            drift_flow=flow)
    p = ErgodicProblem(dyn, flow, EmpiricalMeasure.uniform([[0.3, 0.2]]), KernelParams(1.0), 6, [0.3, 0.2],
                       drop_constant=False)
    assert objective(np.zeros((5, 2)), p) <= 1e-12


def test_regulariser_vanishes_at_zero_control(rng):
    dyn = DynamicsModel.box("single_integrator", 0.1, 1.0)
    mu = EmpiricalMeasure.uniform(rng.normal(size=(4, 2)))
    p = zero_flow_problem(dyn, mu, KernelParams(1.0), 5, [0.2, 0.1], control_reg=3.0, drop_constant=False)
    expected = empirical_mmd(np.tile([0.2, 0.1], (5, 1)), mu, KernelParams(1.0)).value
    assert objective(np.zeros((4, 2)), p) == pytest.approx(expected, abs=1e-15)


@given(seed=st.integers(0, 1000), lams=st.lists(st.floats(0, 10), min_size=2, max_size=5))
def test_objective_monotone_in_regulariser(seed, lams):
    rng = np.random.default_rng(seed)
    base = _rotation_problem(T=6)
    U = rng.uniform(-1, 1, base.control_shape)
    vals = [objective(U, replace(base, control_reg=lam)) for lam in sorted(lams)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_start_raises():
    dyn = DynamicsModel.box("single_integrator", 0.1, 1e308)
    p = zero_flow_problem(dyn, EmpiricalMeasure.uniform([[0.0, 0.0]]), KernelParams(1.0), 3, [0, 0],
                          control_reg=1.0)
    with pytest.raises(InitializationError):
        optimize(p, U_init=np.full((2, 2), 1e308))


# -- optimization ----------------------------------------------------------------

def test_degenerate_single_target():
    dyn = DynamicsModel.box("single_integrator", 0.1, 1.0)
    p = zero_flow_problem(dyn, EmpiricalMeasure.uniform([[0.4, -0.3]]), KernelParams(1.0), 2, [0.4, -0.3])
    sol = optimize(p, seed=0)
    assert sol.final_metric.value <= 1e-6
    assert np.abs(sol.controls).max() <= 1e-2


def test_descent_towards_offset_target():
    dyn = DynamicsModel.box("single_integrator", 0.1, 1.0)
    p = zero_flow_problem(dyn, EmpiricalMeasure.uniform([[0.5, 0.0]]), KernelParams(0.5), 10, [0, 0])
    U0 = np.zeros(p.control_shape)
    sol = optimize(p, U_init=U0)
    start = ergodic_metric(rollout(dyn, [0, 0], U0), None, p.target, p.kernel, "static").value
    assert sol.final_metric.value < start


@pytest.mark.parametrize("mode", ["backward", "forward"])
@pytest.mark.parametrize("seed", range(5))
def test_history_non_increasing_and_feasible(mode, seed):
    p = _rotation_problem(seed=seed, T=15, mode=mode)
    sol = optimize(p, seed=seed, max_iters=80)
    h = np.array(sol.objective_history)
    assert np.all(np.diff(h) < 0)
    lo, hi = p.dynamics.control_bounds.T
    assert np.all(sol.controls >= lo) and np.all(sol.controls <= hi)
    assert len(h) == sol.iterations + 1


def test_drop_constant_gives_identical_iterates():
    a = optimize(_rotation_problem(drop_constant=True), seed=1, max_iters=60)
    b = optimize(_rotation_problem(drop_constant=False), seed=1, max_iters=60)
    assert a.iterations == b.iterations
    assert np.abs(a.controls - b.controls).max() <= 1e-12
    assert a.final_metric.value == pytest.approx(b.final_metric.value, abs=1e-12)


def test_determinism():
    a = optimize(_rotation_problem(), seed=5, max_iters=50, n_starts=2)
    b = optimize(_rotation_problem(), seed=5, max_iters=50, n_starts=2)
    assert np.array_equal(a.controls, b.controls)
    assert a.objective_history == b.objective_history


def test_multi_start_never_worse_than_first_start():
    p = _rotation_problem(seed=2)
    one = optimize(p, seed=4, max_iters=100)
    four = optimize(p, seed=4, max_iters=100, n_starts=4)
    assert four.objective_history[-1] <= one.objective_history[-1]


def test_frozen_regression_value():
    sol = optimize(_rotation_problem(), seed=3, max_iters=200)
    assert sol.final_metric.value == pytest.approx(0.10844148667427103, rel=1e-9)
    assert sol.iterations == 88 and sol.converged


def test_continuation_reports_final_bandwidth_metric():
    p = _rotation_problem()
    sol = optimize_continuation(p, [1.6, 0.8, 0.4], seed=0, max_iters=60)
    direct = ergodic_metric(sol.trajectory, p.flow, p.target, p.kernel, p.mode)
    assert sol.final_metric == direct


def test_sub_ergodic_trend():
    finals = {}
    for T in (16, 64):
        vals = []
        for seed in range(10):
            rng = np.random.default_rng(seed)
            mu = EmpiricalMeasure.uniform(rng.uniform(-1, 1, (10, 2)))
            dyn = DynamicsModel.box("single_integrator", 0.1, 2.0)
            p = zero_flow_problem(dyn, mu, KernelParams(0.3), T, [0, 0])
            vals.append(optimize(p, seed=seed, max_iters=300).final_metric.value)
        finals[T] = float(np.median(vals))
    assert finals[64] <= finals[16]
