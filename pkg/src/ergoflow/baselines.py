"""Greedy information-maximization baseline that tracks moving samples.

A sample counts as captured at step ``t`` when the robot's projected position
is within ``sensing_radius`` of where the flow has carried it by then. The
first capture of sample ``j`` earns its weight ``w_j``; each later capture
earns ``revisit_discount * w_j``.

The planner is deliberately naive: at every control knot it tries a small
fixed candidate set, holds each candidate for ``greedy_horizon`` steps, and
commits the first step of the best one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import EmpiricalMeasure, Trajectory
from .dynamics import rollout
from .errors import ValidationError
from .flows import DiscreteFlow, sample_paths
from .metric import ergodic_metric
from .planner import ErgodicProblem, PlanSolution, project_controls

REFINE_ANGLE = math.pi / 8


@dataclass(frozen=True)
class InfoMaxConfig:
    sensing_radius: float
    revisit_discount: float = 0.1
    greedy_horizon: int = 5

    def __post_init__(self):
        if not (math.isfinite(self.sensing_radius) and self.sensing_radius > 0):
            raise ValidationError("sensing_radius must be positive")
        if not 0.0 <= self.revisit_discount <= 1.0:
            raise ValidationError("revisit_discount must lie in [0, 1]")
        if int(self.greedy_horizon) != self.greedy_horizon or self.greedy_horizon < 1:
            raise ValidationError("greedy_horizon must be a positive integer")


def _score(counts: np.ndarray, w: np.ndarray, discount: float) -> float:
    hit = counts > 0
    return float(np.sum(w[hit] * (1.0 + discount * (counts[hit] - 1))))


def _hits(pos: np.ndarray, samples: np.ndarray, radius: float) -> np.ndarray:
    d2 = np.sum((samples - pos) ** 2, axis=-1)
    return d2 <= radius * radius


def infomax_objective(traj, flow: DiscreteFlow, mu: EmpiricalMeasure, cfg: InfoMaxConfig) -> float:
    """Captured sample weight along ``traj`` (higher is better)."""
    G = np.asarray(traj.projected if isinstance(traj, Trajectory) else traj, dtype=np.float64)
    S = sample_paths(flow, mu.points, G.shape[0])
    counts = _hits(G[:, None, :], S, cfg.sensing_radius).sum(axis=0)
    return _score(counts, mu.weights, cfg.revisit_discount)


def _edge_scaled(direction: np.ndarray, bounds: np.ndarray) -> np.ndarray:
    """Longest in-box multiple of ``direction`` (zero if the box excludes it)."""
    lo, hi = bounds[:, 0], bounds[:, 1]
    t = math.inf
    for d, a, b in zip(direction, lo, hi):
        if d > 0:
            t = min(t, b / d)
        elif d < 0:
            t = min(t, a / d)
    if not math.isfinite(t) or t <= 0:
        return project_controls(np.zeros_like(direction)[None], bounds)[0]
    return direction * t


def _directions(dim: int) -> np.ndarray:
    if dim == 2:
        a = np.arange(8) * (math.pi / 4)
        return np.stack([np.cos(a), np.sin(a)], axis=1)
    eye = np.eye(dim)
    return np.concatenate([eye, -eye])


def _candidates(bounds: np.ndarray) -> np.ndarray:
    dim = bounds.shape[0]
    zero = project_controls(np.zeros((1, dim)), bounds)
    moves = np.array([_edge_scaled(d, bounds) for d in _directions(dim)])
    return np.concatenate([zero, moves])


def _refinements(u: np.ndarray, bounds: np.ndarray) -> list[np.ndarray]:
    out = []
    if u.shape[0] == 2 and np.any(u):
        for sign in (1.0, -1.0):
            c, s = math.cos(sign * REFINE_ANGLE), math.sin(sign * REFINE_ANGLE)
            d = np.array([c * u[0] - s * u[1], s * u[0] + c * u[1]])
            out.append(_edge_scaled(d, bounds))
    out.append(project_controls(0.5 * u[None], bounds)[0])
    return out


def infomax_plan(prob: ErgodicProblem, cfg: InfoMaxConfig) -> PlanSolution:
    """Receding greedy plan; ties go to the lowest candidate index."""
    dyn = prob.dynamics
    T = prob.horizon
    bounds = dyn.control_bounds
    w = prob.target.weights
    S = sample_paths(prob.flow, prob.target.points, T)
    r = cfg.sensing_radius
    cands = _candidates(bounds)

    x = prob.x0
    counts = _hits(dyn.project(x), S[0], r).astype(np.int64)
    base = _score(counts, w, cfg.revisit_discount)
    history = [-base]
    U = np.zeros((T - 1, dyn.dim))

    def gain(k, u):
        c = counts.copy()
        y = x
        for j in range(k, min(k + cfg.greedy_horizon, T - 1)):
            y = dyn._step(y, u, j)
            c += _hits(dyn.project(y), S[j + 1], r)
        return _score(c, w, cfg.revisit_discount)

    for k in range(T - 1):
        scores = [gain(k, u) for u in cands]
        i = int(np.argmax(scores))
        best, best_score = cands[i], scores[i]
        for u in _refinements(best, bounds):
            s = gain(k, u)
            if s > best_score:
                best, best_score = u, s
        U[k] = best
        x = dyn._step(x, best, k)
        counts += _hits(dyn.project(x), S[k + 1], r)
        history.append(-_score(counts, w, cfg.revisit_discount))

    traj = rollout(dyn, prob.x0, U)
    report = ergodic_metric(traj, prob.flow, prob.metric_target(), prob.kernel, prob.mode,
                            drop_constant=False, target_is_mu0=False)
    return PlanSolution(U, traj, history, report, T - 1, True, planner="infomax")
