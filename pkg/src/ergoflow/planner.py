"""Ergodic trajectory optimization over control sequences (single shooting).

States are eliminated by rollout, so the dynamics constraint holds by
construction and only the control box remains; it is enforced by projection
after every step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .core import EmpiricalMeasure, Trajectory
from .dynamics import DynamicsModel, rollout, rollout_adjoint_grad
from .errors import InitializationError, NonInvertibleFlowError, ValidationError
from .flows import DiscreteFlow, IdentityFlow
from .kernels import KernelParams
from .metric import MODES, MetricReport, ergodic_metric, ergodic_metric_and_grad, forward_target, target_self_term

ARMIJO_C = 1e-4
SHRINK = 0.5
MAX_BACKTRACKS = 30
STALL_WINDOW = 10


@dataclass(frozen=True, eq=False)
class ErgodicProblem:
    dynamics: DynamicsModel
    flow: DiscreteFlow
    target: EmpiricalMeasure
    kernel: KernelParams
    horizon: int
    x0: np.ndarray
    mode: str = "backward"
    control_reg: float = 0.0
    drop_constant: bool = True

    def __post_init__(self):
        if self.horizon < 2:
            raise ValidationError("horizon must be at least 2")
        if self.mode not in MODES:
            raise ValidationError(f"unknown metric mode {self.mode!r}")
        if self.mode == "backward" and not self.flow.invertible:
            raise NonInvertibleFlowError("backward mode needs an invertible flow")
        if not self.control_reg >= 0:
            raise ValidationError("control_reg must be nonnegative")
        if self.target.dim != self.dynamics.dim:
            raise ValidationError("target and dynamics disagree on ambient dimension")
        object.__setattr__(self, "x0", self.dynamics.initial_state(self.x0))

    @property
    def control_shape(self) -> tuple[int, int]:
        return (self.horizon - 1, self.dynamics.dim)

    def metric_target(self) -> EmpiricalMeasure:
        """Measure the mapped trajectory is compared against."""
        if self.mode == "forward":
            return forward_target(self.target, self.flow, self.horizon)
        return self.target


@dataclass
class PlanSolution:
    controls: np.ndarray
    trajectory: Trajectory
    objective_history: list[float]
    final_metric: MetricReport
    iterations: int
    converged: bool
    planner: str = "ergodic"


def project_controls(U, bounds) -> np.ndarray:
    """Clamp every control to its per-axis ``[lo, hi]`` box."""
    b = np.asarray(bounds, dtype=np.float64)
    return np.clip(np.asarray(U, dtype=np.float64), b[:, 0], b[:, 1])


class _Evaluator:
    """Objective and gradient with the problem-constant pieces cached."""

    def __init__(self, prob: ErgodicProblem):
        self.prob = prob
        self.target = prob.metric_target()
        # Needed for reports and for a shift-free convergence scale even when
        # the optimizer itself drops the constant.
        self.target_term = target_self_term(self.target, prob.kernel)

    def _metric_mode(self):
        return self.prob.mode

    def value(self, U):
        p = self.prob
        traj = rollout(p.dynamics, p.x0, U)
        rep = ergodic_metric(traj, p.flow, self.target, p.kernel, p.mode, p.drop_constant, target_is_mu0=False)
        return rep.value + self._reg(U), traj

    def value_and_grad(self, U):
        p = self.prob
        traj = rollout(p.dynamics, p.x0, U)
        rep, gG = ergodic_metric_and_grad(
            traj, p.flow, self.target, p.kernel, p.mode, p.drop_constant,
            target_is_mu0=False, target_term=self.target_term,
        )
        gU = rollout_adjoint_grad(p.dynamics, p.x0, U, gG, traj=traj)
        gU += 2.0 * p.control_reg * p.dynamics.dt * U
        return rep.value + self._reg(U), gU, traj

    def _reg(self, U):
        return self.prob.control_reg * self.prob.dynamics.dt * float(np.sum(U * U))

    def full_report(self, traj) -> MetricReport:
        p = self.prob
        return ergodic_metric(traj, p.flow, self.target, p.kernel, p.mode, False, target_is_mu0=False)

    def scale(self, f) -> float:
        """Objective magnitude with the dropped constant restored."""
        return abs(f + self.target_term) if self.prob.drop_constant else abs(f)


def objective(U, prob: ErgodicProblem) -> float:
    """Ergodic metric of the rollout plus ``control_reg * dt * sum |u_t|^2``."""
    U = np.asarray(U, dtype=np.float64).reshape(prob.control_shape)
    f, _ = _Evaluator(prob).value(U)
    if not math.isfinite(f):
        raise InitializationError("objective is not finite")
    return f


def initial_controls(prob: ErgodicProblem, seed: int, scale: float = 0.01) -> np.ndarray:
    rng = np.random.default_rng(seed)
    U = rng.uniform(-scale, scale, size=prob.control_shape)
    return project_controls(U, prob.dynamics.control_bounds)


def _descend(ev: _Evaluator, U, max_iters: int, step0: float, tol: float):
    bounds = ev.prob.dynamics.control_bounds
    U = project_controls(U, bounds)
    f, g, traj = ev.value_and_grad(U)
    if not math.isfinite(f):
        raise InitializationError("objective at the initial controls is not finite")
    history = [f]
    alpha = step0
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        accepted = False
        a = alpha
        for _ in range(MAX_BACKTRACKS + 1):
            U_new = project_controls(U - a * g, bounds)
            d = U_new - U
            if not np.any(d):
                break
            f_new, traj_new = ev.value(U_new)
            if math.isfinite(f_new) and f_new < f and f_new <= f + ARMIJO_C * float(np.sum(g * d)):
                accepted = True
                break
            a *= SHRINK
        if not accepted:
            converged = True
            it -= 1
            break
        g_old = g
        U = U_new
        f, g, traj = ev.value_and_grad(U)
        history.append(f)
        # Barzilai-Borwein trial step for the next iteration; Armijo still decides.
        sy = float(np.sum(d * (g - g_old)))
        alpha = float(np.sum(d * d)) / sy if sy > 0 else 2.0 * a
        if len(history) > STALL_WINDOW:
            old = history[-1 - STALL_WINDOW]
            if (old - f) < tol * max(ev.scale(old), 1e-300):
                converged = True
                break
    return U, traj, history, it, converged


def optimize(prob: ErgodicProblem, U_init=None, max_iters: int = 500, step0: float = 1.0,
             tol: float = 1e-6, seed: int = 0, n_starts: int = 1) -> PlanSolution:
    """Projected gradient descent with Armijo backtracking.

    With ``U_init=None`` each start draws small uniform controls from
    ``seed``; ``n_starts > 1`` keeps the start with the lowest objective
    (an explicit ``U_init`` is always the first start).
    """
    ev = _Evaluator(prob)
    seeds = np.random.SeedSequence(seed).spawn(n_starts)
    best = None
    for s, ss in enumerate(seeds):
        if s == 0 and U_init is not None:
            U0 = np.asarray(U_init, dtype=np.float64).reshape(prob.control_shape)
        else:
            U0 = initial_controls(prob, int(ss.generate_state(1)[0]))
        U, traj, hist, it, conv = _descend(ev, U0, max_iters, step0, tol)
        if best is None or hist[-1] < best[2][-1]:
            best = (U, traj, hist, it, conv)
    U, traj, hist, it, conv = best
    return PlanSolution(U, traj, hist, ev.full_report(traj), it, conv)


def optimize_continuation(prob: ErgodicProblem, bandwidths, U_init=None, seed: int = 0,
                          n_starts: int = 1, **opts) -> PlanSolution:
    """Solve a sequence of problems with shrinking kernel bandwidth.

    Each stage starts from the previous stage's controls. The returned
    history concatenates the stage histories; it is non-increasing within a
    stage but may jump between stages since the objective changes.
    """
    U = U_init
    sol = None
    history = []
    iters = 0
    for i, h in enumerate(bandwidths):
        stage = replace(prob, kernel=KernelParams(h, prob.kernel.family))
        sol = optimize(stage, U, seed=seed, n_starts=n_starts if i == 0 else 1, **opts)
        U = sol.controls
        history.extend(sol.objective_history)
        iters += sol.iterations
    final = _Evaluator(prob).full_report(sol.trajectory)
    return PlanSolution(sol.controls, sol.trajectory, history, final, iters, sol.converged)


def zero_flow_problem(dynamics: DynamicsModel, target: EmpiricalMeasure, kernel: KernelParams,
                      horizon: int, x0, **kw) -> ErgodicProblem:
    """Static-mode problem on a stationary target."""
    return ErgodicProblem(dynamics, IdentityFlow(target.dim, dynamics.dt), target, kernel, horizon, x0,
                          mode="static", **kw)
