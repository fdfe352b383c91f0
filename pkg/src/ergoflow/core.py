"""Value types shared by every module: measures, trajectories, controls.

Points are plain float64 arrays; a set of N points in an n-dimensional
ambient space is an ``(N, n)`` array. A control sequence is a ``(T-1, m)``
array whose row ``t`` drives state ``t`` to state ``t+1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidMeasureError, ShapeError

# Weights that already sum to one within this slack are returned untouched,
# which keeps normalization exactly idempotent.
_NORMALIZED_SLACK = 1e-12


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


def as_points(points, dim: int | None = None) -> np.ndarray:
    """Coerce to a finite ``(N, n)`` float64 array."""
    p = np.asarray(points, dtype=np.float64)
    if p.ndim == 1:
        p = p[None, :]
    if p.ndim != 2 or p.shape[1] < 1:
        raise ShapeError(f"expected an (N, n) point array, got shape {p.shape}")
    if dim is not None and p.shape[1] != dim:
        raise ShapeError(f"expected points of dimension {dim}, got {p.shape[1]}")
    if not np.all(np.isfinite(p)):
        raise ShapeError("points must be finite")
    return p


def normalize_weights(raw) -> np.ndarray:
    """Scale nonnegative weights to a probability vector.

    Raises:
        InvalidMeasureError: if any weight is negative or non-finite, or all
            weights are zero.
    """
    w = np.asarray(raw, dtype=np.float64).ravel()
    if w.size == 0:
        raise InvalidMeasureError("weight list is empty")
    if not np.all(np.isfinite(w)):
        raise InvalidMeasureError("weights must be finite")
    if np.any(w < 0):
        raise InvalidMeasureError("weights must be nonnegative")
    total = w.sum()
    if total <= 0:
        raise InvalidMeasureError("at least one weight must be positive")
    if abs(total - 1.0) <= _NORMALIZED_SLACK:
        return w.copy()
    return w / total


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    """Weighted point set standing in for a probability measure."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = as_points(self.points)
        w = np.asarray(self.weights, dtype=np.float64).ravel()
        if w.shape[0] != pts.shape[0]:
            raise ShapeError(f"{pts.shape[0]} points but {w.shape[0]} weights")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise InvalidMeasureError("weights must be finite and nonnegative")
        if abs(w.sum() - 1.0) > _NORMALIZED_SLACK:
            raise InvalidMeasureError(f"weights sum to {w.sum()!r}, expected 1")
        object.__setattr__(self, "points", _frozen(pts))
        object.__setattr__(self, "weights", _frozen(w))

    @classmethod
    def uniform(cls, points) -> "EmpiricalMeasure":
        pts = as_points(points)
        return cls(pts, np.full(pts.shape[0], 1.0 / pts.shape[0]))

    @classmethod
    def weighted(cls, points, raw_weights) -> "EmpiricalMeasure":
        return cls(as_points(points), normalize_weights(raw_weights))

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def with_points(self, points) -> "EmpiricalMeasure":
        """Same weights attached to new point locations."""
        return EmpiricalMeasure(points, self.weights)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """States ``x_0..x_{T-1}`` and their projections ``g(x_t)``."""

    states: np.ndarray
    projected: np.ndarray
    dt: float

    def __post_init__(self):
        s = np.asarray(self.states, dtype=np.float64)
        g = np.asarray(self.projected, dtype=np.float64)
        if s.ndim != 2 or g.ndim != 2:
            raise ShapeError("states and projected must be 2-D arrays")
        if s.shape[0] != g.shape[0] or s.shape[0] < 1:
            raise ShapeError(
                f"states ({s.shape[0]}) and projected ({g.shape[0]}) lengths differ or are empty"
            )
        if not self.dt > 0:
            raise ShapeError("dt must be positive")
        object.__setattr__(self, "states", _frozen(s))
        object.__setattr__(self, "projected", _frozen(g))
        object.__setattr__(self, "dt", float(self.dt))

    @classmethod
    def from_points(cls, points, dt: float = 1.0) -> "Trajectory":
        """Trajectory whose states are the ambient points themselves."""
        p = as_points(points)
        return cls(p, p, dt)

    def __len__(self) -> int:
        return self.states.shape[0]

    @property
    def horizon(self) -> int:
        return self.states.shape[0]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.horizon) * self.dt
