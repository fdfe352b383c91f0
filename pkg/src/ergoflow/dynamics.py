"""Robot transition models, projection to the ambient space, rollout and adjoint.

Controls ``u_0 .. u_{T-2}`` take ``x_0`` to ``x_1 .. x_{T-1}``, so a rollout of
``T-1`` controls yields ``T`` states.

Drift (the ambient flow acting on the robot) is integrated with explicit Euler
by default. ``drift_integrator="flow"`` instead advances the position by the
exact step map of ``drift_flow`` and adds the commanded displacement
(``pos' = zeta(pos) + dt * u``); with zero control this reproduces the
sample flow exactly, which matters in fast rotating fields where Euler
spirals outward.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Trajectory
from .errors import ControlViolationError, ShapeError, ValidationError
from .flows import DiscreteFlow, IdentityFlow, RotationFlow, TranslationFlow, VectorField

FAMILIES = ("single_integrator", "double_integrator")
BOUND_SLACK = 1e-12


@dataclass(frozen=True, eq=False)
class DynamicsModel:
    family: str
    dt: float
    control_bounds: np.ndarray
    drift_coupled: bool = False
    drift_field: VectorField | None = None
    drift_integrator: str = "euler"
    drift_flow: DiscreteFlow | None = None
    t0: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValidationError(f"unknown dynamics family {self.family!r}")
        if not self.dt > 0:
            raise ValidationError("dt must be positive")
        b = np.array(self.control_bounds, dtype=np.float64)
        if b.ndim != 2 or b.shape[1] != 2:
            raise ShapeError("control_bounds must be an (m, 2) array of [lo, hi]")
        if np.any(b[:, 0] > b[:, 1]):
            raise ValidationError("control bounds need lo <= hi on every axis")
        b.setflags(write=False)
        object.__setattr__(self, "control_bounds", b)
        if self.drift_integrator not in ("euler", "flow"):
            raise ValidationError(f"unknown drift integrator {self.drift_integrator!r}")
        if self.drift_coupled:
            if self.drift_integrator == "euler" and self.drift_field is None:
                raise ValidationError("drift-coupled Euler dynamics need a drift_field")
            if self.drift_integrator == "flow":
                if self.drift_flow is None:
                    raise ValidationError("drift_integrator='flow' needs a drift_flow")
                if self.family != "single_integrator":
                    raise ValidationError("flow drift integration is defined for single integrators only")
                if abs(self.drift_flow.dt - self.dt) > 1e-12 * self.dt:
                    raise ValidationError("drift_flow.dt must equal the model dt")

    @classmethod
    def box(cls, family: str, dt: float, bound: float, dim: int = 2, **kw) -> "DynamicsModel":
        """Symmetric box bounds ``[-bound, bound]`` on every axis."""
        return cls(family, dt, np.tile([-bound, bound], (dim, 1)), **kw)

    @property
    def dim(self) -> int:
        return self.control_bounds.shape[0]

    @property
    def state_dim(self) -> int:
        return self.dim if self.family == "single_integrator" else 2 * self.dim

    def project(self, states: np.ndarray) -> np.ndarray:
        """``g``: position components of each state."""
        return np.asarray(states)[..., : self.dim]

    def initial_state(self, position) -> np.ndarray:
        pos = np.asarray(position, dtype=np.float64).ravel()
        if pos.shape[0] == self.state_dim:
            return pos
        if pos.shape[0] != self.dim:
            raise ShapeError(f"expected position of dimension {self.dim}")
        return np.concatenate([pos, np.zeros(self.state_dim - self.dim)])

    def time(self, k: int) -> float:
        return self.t0 + k * self.dt

    # ------------------------------------------------------------------
    def _drift(self, pos, k):
        if not self.drift_coupled:
            return np.zeros(self.dim)
        return self.drift_field.velocity(pos[None, :], self.time(k))[0]

    def _drift_jacobian(self, pos, k):
        if not self.drift_coupled:
            return np.zeros((self.dim, self.dim))
        return self.drift_field.jacobian(pos[None, :], self.time(k))[0]

    def _step(self, x, u, k):
        n = self.dim
        if self.family == "single_integrator":
            if self.drift_coupled and self.drift_integrator == "flow":
                return self.drift_flow.step(x[None, :], k)[0] + self.dt * u
            return x + self.dt * (u + self._drift(x, k))
        pos, vel = x[:n], x[n:]
        return np.concatenate([pos + self.dt * vel, vel + self.dt * (u + self._drift(pos, k))])

    def _linearize(self, x, k):
        """``(A, B)`` with ``A = d x' / d x`` and ``B = d x' / d u``."""
        n = self.dim
        dt = self.dt
        eye = np.eye(n)
        if self.family == "single_integrator":
            if self.drift_coupled and self.drift_integrator == "flow":
                A = self.drift_flow.step_jacobian(x[None, :], k)[1][0]
            else:
                A = eye + dt * self._drift_jacobian(x, k)
            return A, dt * eye
        A = np.zeros((2 * n, 2 * n))
        A[:n, :n] = eye
        A[:n, n:] = dt * eye
        A[n:, :n] = dt * self._drift_jacobian(x[:n], k)
        A[n:, n:] = eye
        B = np.zeros((2 * n, n))
        B[n:, :] = dt * eye
        return A, B

    def check_control(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64).ravel()
        if u.shape[0] != self.dim:
            raise ShapeError(f"control has dimension {u.shape[0]}, expected {self.dim}")
        lo, hi = self.control_bounds[:, 0], self.control_bounds[:, 1]
        if np.any(u < lo - BOUND_SLACK) or np.any(u > hi + BOUND_SLACK):
            raise ControlViolationError(f"control {u.tolist()} outside bounds {self.control_bounds.tolist()}")
        return u


def step(model: DynamicsModel, x, u, t: float = 0.0) -> np.ndarray:
    """One transition ``x' = f(x, u)`` at absolute time ``t``."""
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.shape[0] != model.state_dim:
        raise ShapeError(f"state has dimension {x.shape[0]}, expected {model.state_dim}")
    u = model.check_control(u)
    k = int(round((t - model.t0) / model.dt))
    return model._step(x, u, k)


def _controls(model: DynamicsModel, U) -> np.ndarray:
    U = np.asarray(U, dtype=np.float64)
    if U.size == 0:
        return np.zeros((0, model.dim))
    if U.ndim != 2 or U.shape[1] != model.dim:
        raise ShapeError(f"controls must be a (T-1, {model.dim}) array, got {U.shape}")
    return U


def _check_all(model: DynamicsModel, U: np.ndarray) -> None:
    lo, hi = model.control_bounds[:, 0], model.control_bounds[:, 1]
    bad = np.any((U < lo - BOUND_SLACK) | (U > hi + BOUND_SLACK), axis=1)
    if np.any(bad):
        k = int(np.argmax(bad))
        raise ControlViolationError(
            f"control {U[k].tolist()} at step {k} outside bounds {model.control_bounds.tolist()}"
        )


def _affine_drift(model: DynamicsModel):
    """``(rate*dt, center, shift)`` when each step is ``R (p - c) + c + shift + dt u``.

    Returns None when the step is not of that form and the generic loop
    must be used.
    """
    if model.family != "single_integrator":
        return None
    zero = np.zeros(model.dim)
    if not model.drift_coupled:
        return 0.0, zero, zero
    if model.drift_integrator != "flow":
        return None
    f = model.drift_flow
    if isinstance(f, IdentityFlow):
        return 0.0, zero, zero
    if isinstance(f, TranslationFlow):
        return 0.0, zero, f.velocity * f.dt
    if isinstance(f, RotationFlow):
        return f.rate * f.dt, f.center, zero
    return None


def _rot(angles: np.ndarray) -> np.ndarray:
    c, s = np.cos(angles), np.sin(angles)
    return np.stack([np.stack([c, -s], axis=1), np.stack([s, c], axis=1)], axis=1)


def rollout(model: DynamicsModel, x0, U) -> Trajectory:
    """States ``x_0 .. x_{len(U)}`` under the control sequence ``U``."""
    U = _controls(model, U)
    _check_all(model, U)
    x = model.initial_state(x0)
    T = U.shape[0] + 1
    aff = _affine_drift(model)
    if aff is not None:
        theta, c, shift = aff
        dtU = model.dt * U
        k = np.arange(T)
        if theta == 0.0:
            states = x + np.concatenate([np.zeros((1, model.dim)), np.cumsum(dtU, axis=0)]) + k[:, None] * shift
        else:
            # p_k - c = R^k [(p_0 - c) + sum_{j<k} R^{-(j+1)} dt u_j]
            z = np.einsum("kij,kj->ki", _rot(-theta * (k[1:])), dtU)
            Z = np.concatenate([np.zeros((1, 2)), np.cumsum(z, axis=0)])
            states = np.einsum("kij,kj->ki", _rot(theta * k), (x - c) + Z) + c
        return Trajectory(states, model.project(states), model.dt)
    states = np.empty((T, model.state_dim))
    states[0] = x
    for k, u in enumerate(U):
        x = model._step(x, u, k)
        states[k + 1] = x
    return Trajectory(states, model.project(states), model.dt)


def rollout_adjoint_grad(model: DynamicsModel, x0, U, dL_dpoints, traj: Trajectory | None = None) -> np.ndarray:
    """Chain per-point gradients ``dL/dg(x_t)`` back to ``dL/du_t``.

    Pass ``traj`` to reuse an existing rollout of the same ``(x0, U)``.
    """
    U = _controls(model, U)
    T = U.shape[0] + 1
    dL = np.asarray(dL_dpoints, dtype=np.float64)
    if dL.shape != (T, model.dim):
        raise ShapeError(f"dL_dpoints must have shape {(T, model.dim)}, got {dL.shape}")
    n = model.dim
    aff = _affine_drift(model)
    if aff is not None:
        theta = aff[0]
        if theta == 0.0:
            lam = np.cumsum(dL[::-1], axis=0)[::-1]
        else:
            # lam_k = R^k sum_{s>=k} R^{-s} dL_s
            k = np.arange(T)
            y = np.einsum("kij,kj->ki", _rot(-theta * k), dL)
            Y = np.cumsum(y[::-1], axis=0)[::-1]
            lam = np.einsum("kij,kj->ki", _rot(theta * k), Y)
        return model.dt * lam[1:]
    if traj is None:
        traj = rollout(model, x0, U)
    states = traj.states
    grad = np.zeros_like(U)
    lam = np.zeros(model.state_dim)
    lam[:n] = dL[T - 1]
    for k in range(T - 2, -1, -1):
        A, B = model._linearize(states[k], k)
        grad[k] = B.T @ lam
        lam = A.T @ lam
        lam[:n] += dL[k]
    return grad
