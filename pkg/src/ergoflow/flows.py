"""Vector fields, discrete flow maps, push-forward of measures, grid loading.

A :class:`DiscreteFlow` advances points by whole steps of duration ``dt``.
Steps carry an absolute index ``k`` (step ``k`` moves time ``k*dt`` to
``(k+1)*dt``) so that time-varying fields can be handled; for autonomous
flows the index is ignored and ``zeta_s o zeta_t = zeta_{s+t}`` holds by
construction.

All point arguments are ``(N, n)`` arrays; Jacobians are ``(N, n, n)``.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .core import EmpiricalMeasure, as_points
from .errors import (
    GridParseError,
    NonFiniteError,
    NonInvertibleFlowError,
    ShapeError,
    UninitializedFieldError,
    ValidationError,
)

FD_STEP = 1e-6


def _rot90(d: np.ndarray) -> np.ndarray:
    return np.stack([-d[:, 1], d[:, 0]], axis=1)


# ---------------------------------------------------------------------------
# Vector fields
# ---------------------------------------------------------------------------


class VectorField:
    """Velocity field ``v(omega, t)`` on the ambient space."""

    family = "abstract"
    time_varying = False

    def __init__(self, dim: int):
        self.dim = int(dim)

    def velocity(self, points: np.ndarray, t: float = 0.0) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, points: np.ndarray, t: float = 0.0) -> np.ndarray:
        """Central finite differences; subclasses override with closed forms."""
        points = np.asarray(points, dtype=np.float64)
        N, n = points.shape
        J = np.empty((N, n, n))
        for i in range(n):
            e = np.zeros(n)
            e[i] = FD_STEP
            J[:, :, i] = (self.velocity(points + e, t) - self.velocity(points - e, t)) / (2 * FD_STEP)
        return J

    def __call__(self, point, t: float = 0.0) -> np.ndarray:
        return self.velocity(as_points(point, self.dim), t)[0]


class ConstantField(VectorField):
    family = "constant"

    def __init__(self, velocity):
        v = np.asarray(velocity, dtype=np.float64).ravel()
        super().__init__(v.shape[0])
        self.v = v

    def velocity(self, points, t=0.0):
        points = np.asarray(points, dtype=np.float64)
        return np.broadcast_to(self.v, points.shape).copy()

    def jacobian(self, points, t=0.0):
        return np.zeros((len(points), self.dim, self.dim))


class RigidRotationField(VectorField):
    """``v = rate * R90 (omega - center)``; counter-clockwise for rate > 0."""

    family = "rigid_rotation"

    def __init__(self, rate: float, center=(0.0, 0.0)):
        super().__init__(2)
        self.rate = float(rate)
        self.center = np.asarray(center, dtype=np.float64)

    def velocity(self, points, t=0.0):
        return self.rate * _rot90(np.asarray(points, dtype=np.float64) - self.center)

    def jacobian(self, points, t=0.0):
        J = np.array([[0.0, -self.rate], [self.rate, 0.0]])
        return np.broadcast_to(J, (len(points), 2, 2)).copy()


class VortexField(VectorField):
    """Axisymmetric vortex ``v = Omega(r) * R90 (omega - center)``.

    ``profile="rigid"`` gives solid-body rotation (``Omega`` constant).
    ``profile="lamb_oseen"`` gives the viscous-core vortex with tangential
    speed ``G / r * (1 - exp(-r^2 / rc^2))``; the angular rate then decays
    with radius, so neighbouring rings of fluid shear past each other.
    Build calibrated instances with :func:`calibrate_vortex`.
    """

    family = "vortex"

    def __init__(self, strength: float, center=(0.0, 0.0), profile: str = "rigid", core_radius: float = 1.0):
        super().__init__(2)
        if profile not in ("rigid", "lamb_oseen"):
            raise ValidationError(f"unknown vortex profile {profile!r}")
        if not core_radius > 0:
            raise ValidationError("core_radius must be positive")
        self.strength = float(strength)
        self.center = np.asarray(center, dtype=np.float64)
        self.profile = profile
        self.core_radius = float(core_radius)

    def _omega(self, s: np.ndarray):
        """Angular rate and its derivative with respect to ``s = r^2``."""
        if self.profile == "rigid":
            return np.full_like(s, self.strength), np.zeros_like(s)
        a = 1.0 / self.core_radius**2
        x = s * a
        small = x < 1e-4
        xs = np.where(small, 1.0, x)
        f = np.where(small, 1.0 - x / 2 + x * x / 6, -np.expm1(-xs) / xs)
        # d/dx [(1 - e^-x) / x] = (x e^-x - 1 + e^-x) / x^2
        df = np.where(small, -0.5 + x / 3, (xs * np.exp(-xs) + np.expm1(-xs)) / xs**2)
        return self.strength * a * f, self.strength * a * a * df

    def speed(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=np.float64)
        om, _ = self._omega(r * r)
        return np.abs(om) * r

    def velocity(self, points, t=0.0):
        d = np.asarray(points, dtype=np.float64) - self.center
        om, _ = self._omega(np.einsum("ij,ij->i", d, d))
        return om[:, None] * _rot90(d)

    def jacobian(self, points, t=0.0):
        d = np.asarray(points, dtype=np.float64) - self.center
        om, dom = self._omega(np.einsum("ij,ij->i", d, d))
        R = np.array([[0.0, -1.0], [1.0, 0.0]])
        Rd = _rot90(d)
        return om[:, None, None] * R + 2.0 * dom[:, None, None] * Rd[:, :, None] * d[:, None, :]


def _box_radii(box, center, n: int = 201):
    """Radii of a uniform grid over ``box`` measured from ``center``."""
    (x0, x1), (y0, y1) = box
    xs = np.linspace(x0, x1, n)
    ys = np.linspace(y0, y1, n)
    X, Y = np.meshgrid(xs, ys)
    return np.hypot(X - center[0], Y - center[1]).ravel()


def calibrate_vortex(box, peak_speed: float, mean_speed: float | None = None,
                     profile: str = "rigid", center=None) -> VortexField:
    """Vortex whose peak speed over ``box`` equals ``peak_speed``.

    For the Lamb-Oseen profile the core radius is additionally chosen so the
    box-averaged speed equals ``mean_speed``; the rigid profile has one free
    parameter and ignores ``mean_speed``.
    """
    box = np.asarray(box, dtype=np.float64)
    if center is None:
        center = box.mean(axis=1)
    center = np.asarray(center, dtype=np.float64)
    r = _box_radii(box, center)
    if profile == "rigid":
        return VortexField(peak_speed / r.max(), center, "rigid")
    if mean_speed is None:
        raise ValidationError("lamb_oseen calibration needs mean_speed")
    target = mean_speed / peak_speed

    def ratio(rc):
        v = VortexField(1.0, center, "lamb_oseen", rc).speed(r)
        return v.mean() / v.max()

    from scipy.optimize import brentq

    # The ratio rises from 0 (tiny core) to a maximum and falls back toward
    # the rigid value; take the smaller-core root, which has more shear.
    grid = np.geomspace(1e-3, 1e3, 121) * r.max()
    vals = np.array([ratio(c) for c in grid]) - target
    cross = np.flatnonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))
    if cross.size == 0:
        raise ValidationError(f"no Lamb-Oseen core radius gives mean/peak ratio {target:.4f} on this box")
    i = cross[0]
    rc = brentq(lambda c: ratio(c) - target, grid[i], grid[i + 1], xtol=1e-12 * r.max())
    unit = VortexField(1.0, center, "lamb_oseen", rc)
    return VortexField(peak_speed / unit.speed(r).max(), center, "lamb_oseen", rc)


class DuffingField(VectorField):
    """Undamped two-well Duffing oscillator ``x1' = x2, x2' = x1 - x1^3``."""

    family = "duffing"

    def __init__(self):
        super().__init__(2)

    def velocity(self, points, t=0.0):
        p = np.asarray(points, dtype=np.float64)
        x1, x2 = p[:, 0], p[:, 1]
        return np.stack([x2, x1 - x1**3], axis=1)

    def jacobian(self, points, t=0.0):
        p = np.asarray(points, dtype=np.float64)
        J = np.zeros((len(p), 2, 2))
        J[:, 0, 1] = 1.0
        J[:, 1, 0] = 1.0 - 3.0 * p[:, 0] ** 2
        return J


class AttractorField(VectorField):
    """Constant-speed pull toward the nearest attractor, zero inside ``stop_radius``."""

    family = "attractor"

    def __init__(self, attractors, max_speed: float, stop_radius: float = 0.5, eps: float = 1e-9):
        att = as_points(attractors)
        super().__init__(att.shape[1])
        self.attractors = att
        self.max_speed = float(max_speed)
        self.stop_radius = float(stop_radius)
        self.eps = float(eps)

    def nearest(self, points):
        p = np.asarray(points, dtype=np.float64)
        d = np.linalg.norm(p[:, None, :] - self.attractors[None, :, :], axis=2)
        idx = np.argmin(d, axis=1)
        return idx, self.attractors[idx] - p, d[np.arange(len(p)), idx]

    def velocity(self, points, t=0.0):
        _, diff, dist = self.nearest(points)
        v = self.max_speed * diff / np.maximum(dist, self.eps)[:, None]
        v[dist <= self.stop_radius] = 0.0
        return v


class ComposedField(VectorField):
    """Pointwise sum of component fields."""

    family = "composed"

    def __init__(self, fields):
        fields = list(fields)
        if not fields:
            raise ValidationError("composed field needs at least one component")
        dims = {f.dim for f in fields}
        if len(dims) != 1:
            raise ShapeError(f"component fields disagree on dimension: {sorted(dims)}")
        super().__init__(dims.pop())
        self.fields = fields
        self.time_varying = any(f.time_varying for f in fields)

    def velocity(self, points, t=0.0):
        return sum(f.velocity(points, t) for f in self.fields)

    def jacobian(self, points, t=0.0):
        return sum(f.jacobian(points, t) for f in self.fields)


class GriddedField(VectorField):
    """2-D velocity frames on a regular grid.

    Bilinear in space, nearest frame in time; queries outside the grid clamp
    to the boundary. ``vx``/``vy`` have shape ``(nt, ny, nx)``.
    """

    family = "gridded"

    def __init__(self, xs=None, ys=None, t0: float = 0.0, dt_frame: float = 1.0, vx=None, vy=None):
        super().__init__(2)
        self._loaded = False
        if xs is not None:
            self.set_data(xs, ys, t0, dt_frame, vx, vy)

    def set_data(self, xs, ys, t0, dt_frame, vx, vy):
        self.xs = np.asarray(xs, dtype=np.float64)
        self.ys = np.asarray(ys, dtype=np.float64)
        self.t0 = float(t0)
        self.dt_frame = float(dt_frame)
        self.vx = np.asarray(vx, dtype=np.float64)
        self.vy = np.asarray(vy, dtype=np.float64)
        self.time_varying = self.vx.shape[0] > 1
        self._loaded = True

    def frame_index(self, t: float) -> int:
        k = int(math.floor((t - self.t0) / self.dt_frame + 0.5))
        return min(max(k, 0), self.vx.shape[0] - 1)

    def velocity(self, points, t=0.0):
        if not self._loaded:
            raise UninitializedFieldError("gridded field queried before data was loaded")
        p = np.asarray(points, dtype=np.float64)
        k = self.frame_index(t)
        x = np.clip(p[:, 0], self.xs[0], self.xs[-1])
        y = np.clip(p[:, 1], self.ys[0], self.ys[-1])
        i = np.clip(np.searchsorted(self.xs, x, side="right") - 1, 0, len(self.xs) - 2)
        j = np.clip(np.searchsorted(self.ys, y, side="right") - 1, 0, len(self.ys) - 2)
        fx = (x - self.xs[i]) / (self.xs[i + 1] - self.xs[i])
        fy = (y - self.ys[j]) / (self.ys[j + 1] - self.ys[j])
        out = np.empty((len(p), 2))
        for c, V in enumerate((self.vx[k], self.vy[k])):
            out[:, c] = (
                V[j, i] * (1 - fx) * (1 - fy)
                + V[j, i + 1] * fx * (1 - fy)
                + V[j + 1, i] * (1 - fx) * fy
                + V[j + 1, i + 1] * fx * fy
            )
        return out


def flow_velocity(field: VectorField, omega, t: float = 0.0) -> np.ndarray:
    """Velocity of ``field`` at a single point."""
    v = field(omega, t)
    if not np.all(np.isfinite(v)):
        raise NonFiniteError(f"non-finite velocity at {omega!r}")
    return v


# ---------------------------------------------------------------------------
# Discrete flows
# ---------------------------------------------------------------------------


class DiscreteFlow:
    """One-step map with composition and (optionally) inversion."""

    def __init__(self, dim: int, dt: float, invertible: bool, time_varying: bool = False,
                 lipschitz_hint: float | None = None):
        if not dt > 0:
            raise ValidationError("flow dt must be positive")
        self.dim = int(dim)
        self.dt = float(dt)
        self.invertible = bool(invertible)
        self.time_varying = bool(time_varying)
        self.lipschitz_hint = lipschitz_hint

    # Subclasses implement these four on (N, n) arrays.
    def step(self, points, k: int = 0):
        raise NotImplementedError

    def step_jacobian(self, points, k: int = 0):
        raise NotImplementedError

    def inverse_step(self, points, k: int = 0):
        raise NonInvertibleFlowError(f"{type(self).__name__} is not invertible")

    def inverse_step_jacobian(self, points, k: int = 0):
        raise NonInvertibleFlowError(f"{type(self).__name__} is not invertible")

    def transport(self, points, start, end, jacobian: bool = False):
        """Move point ``i`` from absolute step ``start[i]`` to ``end[i]``.

        Either every point moves forward (``end >= start``) or every point
        moves backward (``end <= start``, requires an invertible flow).
        Returns the mapped points, and with ``jacobian=True`` also the
        ``(N, n, n)`` Jacobians of each composite map.
        """
        pts = np.array(points, dtype=np.float64)
        N = pts.shape[0]
        start = np.broadcast_to(np.asarray(start, dtype=np.int64), (N,))
        end = np.broadcast_to(np.asarray(end, dtype=np.int64), (N,))
        if np.any(start < 0) or np.any(end < 0):
            raise ValidationError("step indices must be nonnegative")
        J = np.broadcast_to(np.eye(self.dim), (N, self.dim, self.dim)).copy() if jacobian else None
        forward = bool(np.all(end >= start))
        if not forward and not np.all(end <= start):
            raise ValidationError("transport must move all points in one direction")
        if N == 0 or np.all(start == end):
            return (pts, J) if jacobian else pts
        if forward:
            ks = range(int(start.min()), int(end.max()))
        else:
            if not self.invertible:
                raise NonInvertibleFlowError(f"{type(self).__name__} is not invertible")
            ks = range(int(start.max()) - 1, int(end.min()) - 1, -1)
        for k in ks:
            if forward:
                active = np.flatnonzero((start <= k) & (k < end))
            else:
                active = np.flatnonzero((end <= k) & (k < start))
            if active.size == 0:
                continue
            sub = pts[active]
            if jacobian:
                fn = self.step_jacobian if forward else self.inverse_step_jacobian
                nxt, Js = fn(sub, k)
                J[active] = Js @ J[active]
            else:
                nxt = (self.step if forward else self.inverse_step)(sub, k)
            pts[active] = nxt
        if not np.all(np.isfinite(pts)):
            raise NonFiniteError("flow produced non-finite points")
        return (pts, J) if jacobian else pts


def _rk4(field: VectorField, y, t, h):
    k1 = field.velocity(y, t)
    k2 = field.velocity(y + 0.5 * h * k1, t + 0.5 * h)
    k3 = field.velocity(y + 0.5 * h * k2, t + 0.5 * h)
    k4 = field.velocity(y + h * k3, t + h)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _rk4_tangent(field: VectorField, y, t, h):
    """RK4 step together with its forward-mode linearization."""
    n = y.shape[1]
    eye = np.eye(n)
    k1 = field.velocity(y, t)
    K1 = field.jacobian(y, t)
    y2 = y + 0.5 * h * k1
    k2 = field.velocity(y2, t + 0.5 * h)
    K2 = field.jacobian(y2, t + 0.5 * h) @ (eye + 0.5 * h * K1)
    y3 = y + 0.5 * h * k2
    k3 = field.velocity(y3, t + 0.5 * h)
    K3 = field.jacobian(y3, t + 0.5 * h) @ (eye + 0.5 * h * K2)
    y4 = y + h * k3
    k4 = field.velocity(y4, t + h)
    K4 = field.jacobian(y4, t + h) @ (eye + h * K3)
    y_next = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    J = eye + (h / 6.0) * (K1 + 2.0 * K2 + 2.0 * K3 + K4)
    return y_next, J


class FieldFlow(DiscreteFlow):
    """Flow generated by a vector field, one RK4 step of ``dt`` per step.

    The inverse integrates the same field backward in time with RK4, which
    for autonomous fields is RK4 on the negated field.
    """

    def __init__(self, field: VectorField, dt: float, invertible: bool = True, t0: float = 0.0,
                 lipschitz_hint: float | None = None):
        super().__init__(field.dim, dt, invertible, field.time_varying, lipschitz_hint)
        self.field = field
        self.t0 = float(t0)

    def _t(self, k):
        return self.t0 + k * self.dt

    def step(self, points, k=0):
        return _rk4(self.field, np.asarray(points, dtype=np.float64), self._t(k), self.dt)

    def step_jacobian(self, points, k=0):
        return _rk4_tangent(self.field, np.asarray(points, dtype=np.float64), self._t(k), self.dt)

    def inverse_step(self, points, k=0):
        if not self.invertible:
            return super().inverse_step(points, k)
        return _rk4(self.field, np.asarray(points, dtype=np.float64), self._t(k + 1), -self.dt)

    def inverse_step_jacobian(self, points, k=0):
        if not self.invertible:
            return super().inverse_step_jacobian(points, k)
        return _rk4_tangent(self.field, np.asarray(points, dtype=np.float64), self._t(k + 1), -self.dt)


class IdentityFlow(DiscreteFlow):
    def __init__(self, dim: int = 2, dt: float = 1.0):
        super().__init__(dim, dt, invertible=True, lipschitz_hint=1.0)

    def step(self, points, k=0):
        return np.array(points, dtype=np.float64)

    def step_jacobian(self, points, k=0):
        p = np.array(points, dtype=np.float64)
        return p, np.broadcast_to(np.eye(self.dim), (len(p), self.dim, self.dim)).copy()

    inverse_step = step
    inverse_step_jacobian = step_jacobian

    def transport(self, points, start, end, jacobian=False):
        p = np.array(points, dtype=np.float64)
        if jacobian:
            return p, np.broadcast_to(np.eye(self.dim), (len(p), self.dim, self.dim)).copy()
        return p


class _StepCountFlow(DiscreteFlow):
    """Autonomous flow whose ``s``-step map has a closed form ``_power``."""

    def _power(self, points, steps):
        raise NotImplementedError

    def _power_jacobian(self, points, steps):
        raise NotImplementedError

    def step(self, points, k=0):
        p = np.asarray(points, dtype=np.float64)
        return self._power(p, np.ones(len(p)))

    def step_jacobian(self, points, k=0):
        p = np.asarray(points, dtype=np.float64)
        return self._power(p, np.ones(len(p))), self._power_jacobian(p, np.ones(len(p)))

    def inverse_step(self, points, k=0):
        p = np.asarray(points, dtype=np.float64)
        return self._power(p, -np.ones(len(p)))

    def inverse_step_jacobian(self, points, k=0):
        p = np.asarray(points, dtype=np.float64)
        return self._power(p, -np.ones(len(p))), self._power_jacobian(p, -np.ones(len(p)))

    def transport(self, points, start, end, jacobian=False):
        p = np.array(points, dtype=np.float64)
        N = len(p)
        start = np.broadcast_to(np.asarray(start, dtype=np.int64), (N,))
        end = np.broadcast_to(np.asarray(end, dtype=np.int64), (N,))
        s = (end - start).astype(np.float64)
        out = self._power(p, s)
        # Zero-step maps are the exact identity, not a rounding of it.
        out[s == 0] = p[s == 0]
        if jacobian:
            return out, self._power_jacobian(p, s)
        return out


class RotationFlow(_StepCountFlow):
    """Exact rigid rotation by ``rate * dt`` radians per step about ``center``."""

    def __init__(self, rate: float, dt: float, center=(0.0, 0.0)):
        super().__init__(2, dt, invertible=True, lipschitz_hint=1.0)
        self.rate = float(rate)
        self.center = np.asarray(center, dtype=np.float64)

    @classmethod
    def from_field(cls, field: RigidRotationField, dt: float) -> "RotationFlow":
        return cls(field.rate, dt, field.center)

    def _angles(self, steps):
        return self.rate * self.dt * np.asarray(steps, dtype=np.float64)

    def _power(self, points, steps):
        a = self._angles(steps)
        c, s = np.cos(a), np.sin(a)
        d = points - self.center
        return np.stack([c * d[:, 0] - s * d[:, 1], s * d[:, 0] + c * d[:, 1]], axis=1) + self.center

    def _power_jacobian(self, points, steps):
        a = self._angles(steps)
        c, s = np.cos(a), np.sin(a)
        return np.stack([np.stack([c, -s], axis=1), np.stack([s, c], axis=1)], axis=1)


class TranslationFlow(_StepCountFlow):
    """Exact translation by ``velocity * dt`` per step."""

    def __init__(self, velocity, dt: float):
        v = np.asarray(velocity, dtype=np.float64).ravel()
        super().__init__(v.shape[0], dt, invertible=True, lipschitz_hint=1.0)
        self.velocity = v

    def _power(self, points, steps):
        return points + (np.asarray(steps, dtype=np.float64)[:, None] * self.dt) * self.velocity

    def _power_jacobian(self, points, steps):
        return np.broadcast_to(np.eye(self.dim), (len(points), self.dim, self.dim)).copy()


class VortexFlow(_StepCountFlow):
    """Exact flow of an axisymmetric :class:`VortexField`.

    Every point keeps its radius and turns by ``Omega(r) * dt`` per step, so
    the ``s``-step map is a rotation by ``Omega(r) * s * dt``.
    """

    def __init__(self, field: VortexField, dt: float):
        super().__init__(2, dt, invertible=True)
        self.field = field
        self.center = field.center
        # Sheared vortices are not isometries; only solid-body rotation is.
        self.lipschitz_hint = 1.0 if field.profile == "rigid" else None

    def _parts(self, points, steps):
        d = points - self.center
        om, dom = self.field._omega(np.einsum("ij,ij->i", d, d))
        tau = np.asarray(steps, dtype=np.float64) * self.dt
        a = om * tau
        return d, np.cos(a), np.sin(a), dom * tau

    def _power(self, points, steps):
        d, c, s, _ = self._parts(points, steps)
        return np.stack([c * d[:, 0] - s * d[:, 1], s * d[:, 0] + c * d[:, 1]], axis=1) + self.center

    def _power_jacobian(self, points, steps):
        d, c, s, dadS = self._parts(points, steps)
        R = np.stack([np.stack([c, -s], axis=1), np.stack([s, c], axis=1)], axis=1)
        Rd = np.stack([c * d[:, 0] - s * d[:, 1], s * d[:, 0] + c * d[:, 1]], axis=1)
        # d(R(a) d)/d omega = R(a) + (R90 R(a) d) (da/domega)^T, da/domega = 2 dOmega/ds tau d
        return R + (2.0 * dadS)[:, None, None] * _rot90(Rd)[:, :, None] * d[:, None, :]


class AttractorFlow(DiscreteFlow):
    """Exact step map of an :class:`AttractorField`.

    Each point moves in a straight line toward its nearest attractor at
    ``max_speed`` and halts on the ``stop_radius`` circle; moving toward the
    nearest attractor never makes another attractor nearer, so the straight
    line is the exact trajectory. Points in the halt disk never leave it, so
    the flow is not invertible.
    """

    def __init__(self, field: AttractorField, dt: float):
        super().__init__(field.dim, dt, invertible=False)
        self.field = field

    def _move(self, points):
        f = self.field
        _, diff, dist = f.nearest(points)
        travel = np.clip(dist - f.stop_radius, 0.0, f.max_speed * self.dt)
        unit = diff / np.maximum(dist, f.eps)[:, None]
        return points + travel[:, None] * unit, diff, dist, travel, unit

    def step(self, points, k=0):
        return self._move(np.asarray(points, dtype=np.float64))[0]

    def step_jacobian(self, points, k=0):
        p = np.asarray(points, dtype=np.float64)
        out, diff, dist, travel, unit = self._move(p)
        f = self.field
        n = self.dim
        eye = np.eye(n)
        proj = eye - unit[:, :, None] * unit[:, None, :]
        safe = np.maximum(dist, f.eps)[:, None, None]
        full = (dist - f.stop_radius) > f.max_speed * self.dt
        parked = dist <= f.stop_radius
        J = np.where(
            full[:, None, None],
            eye - f.max_speed * self.dt * proj / safe,
            f.stop_radius * proj / safe,
        )
        J[parked] = eye
        return out, J


def flow_from_field(field: VectorField, dt: float, t0: float = 0.0) -> DiscreteFlow:
    """Preferred discrete flow for ``field``: closed forms where they exist."""
    if isinstance(field, RigidRotationField):
        return RotationFlow.from_field(field, dt)
    if isinstance(field, VortexField):
        if field.profile == "rigid":
            return RotationFlow(field.strength, dt, field.center)
        return VortexFlow(field, dt)
    if isinstance(field, ConstantField):
        if not np.any(field.v):
            return IdentityFlow(field.dim, dt)
        return TranslationFlow(field.v, dt)
    if isinstance(field, AttractorField):
        return AttractorFlow(field, dt)
    return FieldFlow(field, dt, t0=t0)


# ---------------------------------------------------------------------------
# Module-level operations
# ---------------------------------------------------------------------------


def _single(flow: DiscreteFlow, omega):
    p = as_points(omega, flow.dim)
    return p, np.ndim(omega) == 1


def flow_step(flow: DiscreteFlow, omega, k: int = 0) -> np.ndarray:
    p, single = _single(flow, omega)
    out = flow.step(p, k)
    if not np.all(np.isfinite(out)):
        raise NonFiniteError("flow step produced non-finite values")
    return out[0] if single else out


def flow_map(flow: DiscreteFlow, omega, steps: int, start: int = 0) -> np.ndarray:
    """``zeta_steps(omega)``; for time-varying flows, from absolute step ``start``."""
    if steps < 0:
        raise ValidationError("steps must be nonnegative")
    p, single = _single(flow, omega)
    out = p.copy() if steps == 0 else flow.transport(p, start, start + steps)
    return out[0] if single else out


def flow_inverse_map(flow: DiscreteFlow, omega, steps: int, start: int | None = None) -> np.ndarray:
    """Inverse of ``flow_map``: points at absolute step ``start`` (default ``steps``)
    pulled back by ``steps`` steps."""
    if not flow.invertible:
        raise NonInvertibleFlowError(f"{type(flow).__name__} is not invertible")
    if steps < 0:
        raise ValidationError("steps must be nonnegative")
    if start is None:
        start = steps
    p, single = _single(flow, omega)
    out = p.copy() if steps == 0 else flow.transport(p, start, start - steps)
    return out[0] if single else out


def sample_paths(flow: DiscreteFlow, points, length: int, start: int = 0) -> np.ndarray:
    """``(length, N, n)`` positions of ``points`` at steps ``start .. start+length-1``."""
    if length < 1:
        raise ValidationError("length must be at least 1")
    p = as_points(points, flow.dim)
    out = np.empty((length,) + p.shape)
    out[0] = p
    for i in range(1, length):
        out[i] = flow.step(out[i - 1], start + i - 1)
    if not np.all(np.isfinite(out)):
        raise NonFiniteError("flow produced non-finite points")
    return out


def push_forward_measure(mu: EmpiricalMeasure, flow: DiscreteFlow, steps: int, start: int = 0) -> EmpiricalMeasure:
    """Points moved by ``zeta_steps``; weights untouched."""
    if steps < 0:
        raise ValidationError("steps must be nonnegative")
    if steps == 0:
        return mu
    return mu.with_points(flow.transport(mu.points, start, start + steps))


# ---------------------------------------------------------------------------
# Grid files
# ---------------------------------------------------------------------------

GRID_MAGIC = ("gridflow", "v1")


def load_gridded_field(source) -> GriddedField:
    """Parse a ``gridflow v1`` text file into a :class:`GriddedField`.

    Header: ``gridflow v1 nx ny nt x0 x1 y0 y1 t0 dt_frame``, then ``nt``
    blocks of ``nx*ny`` rows ``i j vx vy``. Axes are ``linspace(x0, x1, nx)``
    and ``linspace(y0, y1, ny)``. Blank lines and ``#`` comments are skipped.
    """
    text = Path(source).read_text() if not hasattr(source, "read") else source.read()
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            rows.append((lineno, line.split()))
    if not rows:
        raise GridParseError("empty grid file", 1)

    lineno, head = rows[0]
    if len(head) != 11 or tuple(head[:2]) != GRID_MAGIC:
        raise GridParseError("malformed header, expected 'gridflow v1 nx ny nt x0 x1 y0 y1 t0 dt_frame'", lineno)
    try:
        nx, ny, nt = (int(v) for v in head[2:5])
        x0, x1, y0, y1, t0, dtf = (float(v) for v in head[5:])
    except ValueError as exc:
        raise GridParseError(f"malformed header value ({exc})", lineno) from None
    if nx < 2 or ny < 2 or nt < 1:
        raise GridParseError("need nx >= 2, ny >= 2, nt >= 1", lineno)
    if not all(math.isfinite(v) for v in (x0, x1, y0, y1, t0, dtf)):
        raise GridParseError("non-finite header value", lineno)
    if not (x1 > x0 and y1 > y0):
        raise GridParseError("axes must be strictly increasing", lineno)
    if not dtf > 0:
        raise GridParseError("dt_frame must be positive", lineno)

    body = rows[1:]
    expected = nt * nx * ny
    if len(body) != expected:
        last = body[-1][0] if body else lineno
        raise GridParseError(f"expected {expected} data rows, found {len(body)}", last)

    vx = np.full((nt, ny, nx), np.nan)
    vy = np.full((nt, ny, nx), np.nan)
    per = nx * ny
    for r, (ln, tok) in enumerate(body):
        k = r // per
        if len(tok) != 4:
            raise GridParseError("data row must be 'i j vx vy'", ln)
        try:
            i, j = int(tok[0]), int(tok[1])
            u, v = float(tok[2]), float(tok[3])
        except ValueError as exc:
            raise GridParseError(f"bad number ({exc})", ln) from None
        if not (0 <= i < nx and 0 <= j < ny):
            raise GridParseError(f"cell ({i}, {j}) outside {nx}x{ny} grid", ln)
        if not (math.isfinite(u) and math.isfinite(v)):
            raise GridParseError(f"non-finite velocity at cell ({i}, {j}) of frame {k}", ln)
        if not np.isnan(vx[k, j, i]):
            raise GridParseError(f"duplicate cell ({i}, {j}) in frame {k}", ln)
        vx[k, j, i] = u
        vy[k, j, i] = v
    if np.isnan(vx).any():
        k, j, i = np.argwhere(np.isnan(vx))[0]
        raise GridParseError(f"missing cell ({i}, {j}) in frame {k}", body[-1][0])
    return GriddedField(np.linspace(x0, x1, nx), np.linspace(y0, y1, ny), t0, dtf, vx, vy)


def write_gridded_field(path, field: GriddedField) -> None:
    """Inverse of :func:`load_gridded_field`; rows in j-major, i-fastest order."""
    nt, ny, nx = field.vx.shape
    r = lambda v: repr(float(v))
    lines = [
        f"gridflow v1 {nx} {ny} {nt} {r(field.xs[0])} {r(field.xs[-1])} "
        f"{r(field.ys[0])} {r(field.ys[-1])} {r(field.t0)} {r(field.dt_frame)}"
    ]
    for k in range(nt):
        for j in range(ny):
            for i in range(nx):
                lines.append(f"{i} {j} {r(field.vx[k, j, i])} {r(field.vy[k, j, i])}")
    Path(path).write_text("\n".join(lines) + "\n")
