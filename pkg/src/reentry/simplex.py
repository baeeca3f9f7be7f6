"""Projections onto balls, boxes and simplices, and tangent-cone tests."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BOUNDARY_TOL = 1e-9


def project_ball(x, R: float) -> np.ndarray:
    """Radial projection onto the Euclidean (Frobenius) ball of radius ``R``."""
    if R <= 0:
        raise ValueError("radius must be positive")
    x = np.asarray(x, dtype=float)
    n = np.linalg.norm(x)
    if n <= R:
        return x
    return x * (R / n)


def project_rows(x, R: float) -> np.ndarray:
    """Project every row of ``x`` onto the ball of radius ``R``."""
    x = np.asarray(x, dtype=float)
    n = np.linalg.norm(x, axis=-1, keepdims=True)
    scale = np.minimum(1.0, R / np.maximum(n, 1e-300))
    return x * scale


def clamp_box(q, a, b) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(a > b):
        raise ValueError("box lower bound exceeds upper bound")
    return np.clip(np.asarray(q, dtype=float), a, b)


def sparsemax(logits, axis: int = -1) -> np.ndarray:
    """Euclidean projection onto the probability simplex along ``axis``.

    Sorted-threshold algorithm: with z sorted decreasingly, the support size is
    the largest k with 1 + k z_k > sum_{j<=k} z_j, and the output is max(z - tau, 0).
    """
    z = np.moveaxis(np.asarray(logits, dtype=float), axis, -1)
    zs = -np.sort(-z, axis=-1)
    k = np.arange(1, z.shape[-1] + 1)
    cssv = np.cumsum(zs, axis=-1)
    support = 1 + k * zs > cssv
    ksupp = support.sum(axis=-1, keepdims=True)
    tau = (np.take_along_axis(cssv, ksupp - 1, axis=-1) - 1) / ksupp
    out = np.maximum(z - tau, 0.0)
    return np.moveaxis(out, -1, axis)


def softmax(logits, axis: int = -1) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def epsilon_floor(p, eps: float) -> np.ndarray:
    """Mix a simplex vector with the uniform distribution: (1 - eps) p + eps / m."""
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must lie in (0, 1)")
    p = np.asarray(p, dtype=float)
    return (1.0 - eps) * p + eps / p.shape[-1]


def project_simplex_rows(x) -> np.ndarray:
    return sparsemax(x, axis=-1)


@dataclass(frozen=True)
class Ball:
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("ball radius must be positive")


@dataclass(frozen=True)
class Box:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if np.any(lo > hi):
            raise ValueError("box lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)


@dataclass(frozen=True)
class Simplex:
    dimension: int

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("simplex dimension must be at least 1")


ConvexComponentSpec = Ball | Box | Simplex


class OutsideComponent(ValueError):
    pass


def tangent_cone_ok(spec: ConvexComponentSpec, x, v, tol: float = BOUNDARY_TOL) -> bool:
    """Whether velocity ``v`` at ``x`` lies in the tangent cone of the component."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    if isinstance(spec, Ball):
        nx = np.linalg.norm(x)
        if nx > spec.radius + tol:
            raise OutsideComponent(f"|x| = {nx} exceeds radius {spec.radius}")
        if abs(nx - spec.radius) <= tol:
            return bool(np.vdot(x, v) <= tol)
        return True
    if isinstance(spec, Box):
        lo = np.broadcast_to(spec.lower, x.shape)
        hi = np.broadcast_to(spec.upper, x.shape)
        if np.any(x < lo - tol) or np.any(x > hi + tol):
            raise OutsideComponent("point outside box")
        at_lo = np.abs(x - lo) <= tol
        at_hi = np.abs(x - hi) <= tol
        return bool(np.all(v[at_lo] >= -tol) and np.all(v[at_hi] <= tol))
    if isinstance(spec, Simplex):
        if x.shape[-1] != spec.dimension:
            raise OutsideComponent("dimension mismatch")
        if np.any(x < -tol) or abs(x.sum() - 1.0) > tol:
            raise OutsideComponent("point outside simplex")
        if abs(v.sum()) > tol:
            return False
        return bool(np.all(v[x <= tol] >= -tol))
    raise TypeError(f"unknown component spec {spec!r}")
