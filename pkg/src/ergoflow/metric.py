"""Empirical MMD and the flow-adaptive ergodic metrics built on it.

Three modes share one evaluation path:

* ``static``   -- trajectory points ``g(x_t)`` compared directly with the target.
* ``backward`` -- each ``g(x_t)`` is pulled back to step 0 by the inverse flow
  and compared with the initial measure.
* ``forward``  -- each ``g(x_t)`` is pushed forward to the last step ``T-1``
  and compared with the initial measure pushed forward by ``T-1`` steps.

Gradients are taken with respect to the projected trajectory points, chained
through the Jacobians of the flow maps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import EmpiricalMeasure, Trajectory, as_points
from .errors import NonInvertibleFlowError, NumericIntegrityError, ShapeError, ValidationError
from .flows import DiscreteFlow, push_forward_measure
from .kernels import KernelParams, gram, gram_grad_sum

MODES = ("static", "backward", "forward")
CLAMP_SLACK = 1e-10


@dataclass(frozen=True)
class MetricReport:
    value: float
    term_traj_traj: float
    term_cross: float
    term_target_target: float
    constant_term_dropped: bool

    @property
    def raw_value(self) -> float:
        """Unclamped ``tt - 2 cross (+ target)``."""
        v = self.term_traj_traj - 2.0 * self.term_cross
        return v if self.constant_term_dropped else v + self.term_target_target


def target_self_term(target: EmpiricalMeasure, k: KernelParams) -> float:
    """Weighted target double sum; constant for a fixed target."""
    w = target.weights
    return float(w @ gram(target.points, target.points, k) @ w)


def _terms(P: np.ndarray, target: EmpiricalMeasure, k: KernelParams, drop_constant: bool,
           with_grad: bool, target_term: float | None = None):
    if P.shape[1] != target.dim:
        raise ShapeError(f"trajectory dimension {P.shape[1]} != target dimension {target.dim}")
    N = P.shape[0]
    w = target.weights
    Kxx = gram(P, P, k)
    Kxy = gram(P, target.points, k)
    tt = float(Kxx.sum()) / (N * N)
    cross = float((Kxy @ w).sum()) / N
    if drop_constant:
        yy = 0.0
        raw = tt - 2.0 * cross
        value = raw
    else:
        yy = target_self_term(target, k) if target_term is None else target_term
        raw = tt - 2.0 * cross + yy
        if raw < -CLAMP_SLACK:
            raise NumericIntegrityError(f"MMD evaluated to {raw!r} < 0 beyond round-off")
        value = max(raw, 0.0)
    report = MetricReport(value, tt, cross, yy, drop_constant)
    if not with_grad:
        return report, None
    h2 = k.bandwidth**2
    grad = (2.0 / (N * N * h2)) * gram_grad_sum(P, P, Kxx, np.ones(N)) - (
        2.0 / (N * h2)
    ) * gram_grad_sum(P, target.points, Kxy, w)
    return report, grad


def empirical_mmd(X, Y: EmpiricalMeasure, k: KernelParams, drop_constant: bool = False) -> MetricReport:
    """Squared MMD between the uniform measure on ``X`` and the weighted ``Y``."""
    return _terms(as_points(X), Y, k, drop_constant, with_grad=False)[0]


def _projected(traj) -> np.ndarray:
    if isinstance(traj, Trajectory):
        return np.asarray(traj.projected)
    return as_points(traj)


def mapped_points(G: np.ndarray, flow: DiscreteFlow | None, mode: str, jacobian: bool = False):
    """Trajectory points as compared by ``mode``; optionally the map Jacobians."""
    if mode not in MODES:
        raise ValidationError(f"unknown metric mode {mode!r}")
    T, n = G.shape
    if mode == "static" or flow is None:
        if mode == "backward" and flow is None:
            raise ValidationError("backward mode needs a flow")
        return (G.copy(), None) if jacobian else G.copy()
    t = np.arange(T)
    if mode == "backward":
        if not flow.invertible:
            raise NonInvertibleFlowError("backward metric needs an invertible flow")
        return flow.transport(G, t, 0, jacobian=jacobian)
    return flow.transport(G, t, T - 1, jacobian=jacobian)


def forward_target(mu0: EmpiricalMeasure, flow: DiscreteFlow, horizon: int) -> EmpiricalMeasure:
    """``mu_{T-1}``: the initial measure pushed forward ``horizon - 1`` steps."""
    return push_forward_measure(mu0, flow, horizon - 1)


def backward_mmd(traj, flow: DiscreteFlow, mu0: EmpiricalMeasure, k: KernelParams,
                 drop_constant: bool = False) -> MetricReport:
    if not flow.invertible:
        raise NonInvertibleFlowError("backward metric needs an invertible flow")
    P = mapped_points(_projected(traj), flow, "backward")
    return empirical_mmd(P, mu0, k, drop_constant)


def forward_mmd(traj, flow: DiscreteFlow, mu_target: EmpiricalMeasure, k: KernelParams,
                target_is_mu0: bool = True, drop_constant: bool = False) -> MetricReport:
    G = _projected(traj)
    target = forward_target(mu_target, flow, len(G)) if target_is_mu0 else mu_target
    P = mapped_points(G, flow, "forward")
    return empirical_mmd(P, target, k, drop_constant)


def ergodic_metric(traj, flow: DiscreteFlow | None, mu: EmpiricalMeasure, k: KernelParams,
                   mode: str = "backward", drop_constant: bool = False,
                   target_is_mu0: bool = True) -> MetricReport:
    """Flow-adaptive ergodic metric in the requested mode."""
    if mode == "static":
        return empirical_mmd(_projected(traj), mu, k, drop_constant)
    if mode == "backward":
        return backward_mmd(traj, flow, mu, k, drop_constant)
    if mode == "forward":
        return forward_mmd(traj, flow, mu, k, target_is_mu0, drop_constant)
    raise ValidationError(f"unknown metric mode {mode!r}")


def ergodic_metric_and_grad(traj, flow: DiscreteFlow | None, mu: EmpiricalMeasure, k: KernelParams,
                            mode: str = "backward", drop_constant: bool = False,
                            target_is_mu0: bool = True, target_term: float | None = None):
    """Metric report and ``(T, n)`` gradient w.r.t. each projected point.

    The mapped points and their Jacobians are computed once and shared by
    the value and the gradient. ``target_term`` lets callers pass a cached
    target self-similarity sum.
    """
    G = _projected(traj)
    if mode == "forward" and target_is_mu0:
        mu = forward_target(mu, flow, len(G))
    P, J = mapped_points(G, flow, mode, jacobian=True)
    report, gP = _terms(P, mu, k, drop_constant, with_grad=True, target_term=target_term)
    if J is None:
        return report, gP
    return report, np.einsum("tij,ti->tj", J, gP)


def ergodic_metric_grad(traj, flow: DiscreteFlow | None, mu: EmpiricalMeasure, k: KernelParams,
                        mode: str = "backward", target_is_mu0: bool = True) -> np.ndarray:
    return ergodic_metric_and_grad(traj, flow, mu, k, mode, drop_constant=True, target_is_mu0=target_is_mu0)[1]
