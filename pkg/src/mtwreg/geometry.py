"""Unit-sphere helpers: geodesic distance, exponential/log maps, tangent frames.

Points on the sphere are embedded unit vectors of R^n; tangent vectors at x
are ambient vectors orthogonal to x.
"""

from __future__ import annotations

import numpy as np

_SMALL = 1e-12


def normalize(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def project_tangent(x: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Remove the component of ``v`` along ``x``."""
    return v - np.sum(x * v, axis=-1, keepdims=True) * x


def geodesic_distance(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Great-circle distance, accurate near 0 and near pi.

    Uses atan2(|y - (x.y) x|, x.y) rather than arccos(x.y), which loses
    half the digits for nearly equal points.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    dot = np.sum(x * y, axis=-1)
    perp = y - dot[..., None] * x
    return np.arctan2(np.linalg.norm(perp, axis=-1), dot)


def sphere_exp(x: np.ndarray, v: np.ndarray) -> np.ndarray:
    """exp_x(v) for a tangent vector v at x."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    r = np.linalg.norm(v, axis=-1, keepdims=True)
    # sin(r)/r with its Taylor expansion near 0
    sinc = np.where(r > 1e-8, np.sin(r) / np.where(r > 1e-8, r, 1.0), 1.0 - r**2 / 6.0)
    out = np.cos(r) * x + sinc * v
    return out / np.linalg.norm(out, axis=-1, keepdims=True)


def sphere_log(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """log_x(y): the tangent vector at x of length d(x, y) pointing to y.

    Undefined at the antipode; callers keep y off the cut locus.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    dot = np.sum(x * y, axis=-1, keepdims=True)
    perp = y - dot * x
    s = np.linalg.norm(perp, axis=-1, keepdims=True)
    theta = np.arctan2(s, dot)
    scale = np.where(s > _SMALL, theta / np.where(s > _SMALL, s, 1.0), 1.0)
    return scale * perp


def tangent_basis(x: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the tangent plane at x, as columns (n, n-1).

    Deterministic: Householder reflection sending e_k to x, where k is the
    axis least aligned with x.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    k = int(np.argmin(np.abs(x)))
    e = np.zeros(n)
    e[k] = 1.0
    w = e - x
    nw = np.linalg.norm(w)
    if nw < _SMALL:
        H = np.eye(n)
    else:
        w = w / nw
        H = np.eye(n) - 2.0 * np.outer(w, w)
    # H is orthogonal with H e_k = x, so the other columns span x-perp.
    cols = [j for j in range(n) if j != k]
    return H[:, cols]


def random_sphere_points(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    return normalize(rng.standard_normal((count, dim)))


def random_cap_point(rng: np.random.Generator, center: np.ndarray, radius: float) -> np.ndarray:
    """Point drawn uniformly (w.r.t. area) from the geodesic cap B(center, radius)."""
    center = normalize(center)
    n = center.shape[0]
    if radius >= np.pi:
        return random_sphere_points(rng, 1, n)[0]
    while True:
        y = random_sphere_points(rng, 1, n)[0]
        if geodesic_distance(center, y) <= radius:
            return y


def fibonacci_sphere(count: int) -> np.ndarray:
    """Near-uniform point set on S^2 (golden-angle spiral)."""
    i = np.arange(count) + 0.5
    z = 1.0 - 2.0 * i / count
    rho = np.sqrt(1.0 - z**2)
    phi = np.pi * (1.0 + 5.0**0.5) * i
    return np.column_stack([rho * np.cos(phi), rho * np.sin(phi), z])


def rotation_matrix(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation in R^3."""
    a = normalize(axis)
    K = np.array([[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]])
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * K @ K
