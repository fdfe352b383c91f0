"""Gaussian RBF kernel, its gradient, and the median-heuristic bandwidth."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .core import as_points
from .errors import DegenerateBandwidthError, ShapeError, ValidationError

FAMILIES = ("gaussian_rbf",)


@dataclass(frozen=True)
class KernelParams:
    bandwidth: float
    family: str = "gaussian_rbf"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValidationError(f"unknown kernel family {self.family!r}")
        h = float(self.bandwidth)
        if not (math.isfinite(h) and h > 0):
            raise ValidationError(f"bandwidth must be positive and finite, got {self.bandwidth!r}")
        object.__setattr__(self, "bandwidth", h)


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ShapeError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    return a, b


def kernel_eval(a, b, p: KernelParams) -> float:
    """k(a, b) = exp(-|a - b|^2 / (2 h^2))."""
    a, b = _pair(a, b)
    d = a - b
    return float(np.exp(-np.dot(d, d) / (2.0 * p.bandwidth**2)))


def kernel_grad_a(a, b, p: KernelParams) -> np.ndarray:
    """Gradient of k(a, b) with respect to its first argument."""
    a, b = _pair(a, b)
    d = a - b
    h2 = p.bandwidth**2
    return -d / h2 * np.exp(-np.dot(d, d) / (2.0 * h2))


def gram(X, Y, p: KernelParams) -> np.ndarray:
    """Kernel matrix ``K[i, j] = k(X[i], Y[j])``."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.shape[1] != Y.shape[1]:
        raise ShapeError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    K = cdist(X, Y, "sqeuclidean")
    K *= -0.5 / p.bandwidth**2
    return np.exp(K, out=K)


def gram_grad_sum(X, Y, K, coef) -> np.ndarray:
    """``out[i] = sum_j coef[j] * d k(X[i], Y[j]) / d X[i]`` given ``K = gram(X, Y)``.

    Computed without the ``(N, M, n)`` difference tensor: the gradient of the
    RBF kernel is ``-(x - y) k / h^2``, so the sum splits into two products.
    The ``1/h^2`` factor is left to the caller.
    """
    Kc = K * coef[None, :]
    return (Kc @ Y) - Kc.sum(axis=1)[:, None] * X


def median_heuristic_bandwidth(points) -> float:
    """Median pairwise Euclidean distance over all unordered pairs."""
    pts = as_points(points)
    if pts.shape[0] < 2:
        raise DegenerateBandwidthError("median heuristic needs at least two points")
    d = pdist(pts)
    h = float(np.median(d))
    if h <= 0:
        if np.all(d == 0):
            raise DegenerateBandwidthError("all points identical; bandwidth would be zero")
        # More than half the pairs coincide; fall back to the median nonzero spread.
        h = float(np.median(d[d > 0]))
    return h
