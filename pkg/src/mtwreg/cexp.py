"""The c-exponential map (inverse of y -> -grad_x c(x, y)), c-segments, A1/A2 sampling."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.spatial import cKDTree

from . import geometry as geo
from .cost_models import SPHERE, CostModel, sample_valid_pair

NEWTON_TOL = 1e-10
MAX_ITER = 50
DET_FLOOR = 1e-12
MAX_HALVINGS = 20


class NewtonError(RuntimeError):
    """Newton inversion failed; ``reason`` is one of
    ``max_iter``, ``singular``, ``invalid``, ``no_descent``."""

    def __init__(self, reason: str, message: str, y: np.ndarray | None = None, theta: float | None = None):
        super().__init__(message)
        self.reason = reason
        self.y = y
        self.theta = theta


@dataclass
class CotangentTarget:
    x: np.ndarray
    p: np.ndarray
    y: np.ndarray
    residual: float
    iterations: int


def cotangent(model: CostModel, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """p = -grad_x c(x, y) as an ambient vector."""
    return -model.grad_x(x, y)


def _as_ambient(model: CostModel, x: np.ndarray, p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if model.chart == SPHERE:
        if p.shape == (model.dim - 1,):
            return model.tangent_basis(x) @ p
        if p.shape != (model.dim,):
            raise ValueError("sphere cotangent vector has the wrong length")
        return geo.project_tangent(x, p)
    if p.shape != (model.dim,):
        raise ValueError("cotangent vector has the wrong length")
    return p


def c_exponential(
    model: CostModel,
    x,
    p,
    y_init,
    newton_tol: float = NEWTON_TOL,
    max_iter: int = MAX_ITER,
    det_floor: float = DET_FLOOR,
) -> CotangentTarget:
    """Solve -grad_x c(x, y) = p for y by damped Newton started at ``y_init``.

    On the sphere ``p`` may be an ambient tangent vector at x or its
    coordinates in ``model.tangent_basis(x)``; iterates move along geodesics
    so they stay on the sphere.
    """
    x = np.asarray(x, dtype=float)
    p = _as_ambient(model, x, p)
    y = np.asarray(y_init, dtype=float).copy()
    if not model.valid(x, y):
        raise NewtonError("invalid", "initial guess outside the valid region", y)
    sphere = model.chart == SPHERE
    Bx = model.tangent_basis(x) if sphere else None

    def resid(yy):
        return cotangent(model, x, yy) - p

    F = resid(y)
    r = float(np.linalg.norm(F))
    it = 0
    while r > newton_tol:
        if it >= max_iter:
            raise NewtonError("max_iter", f"no convergence in {max_iter} iterations (residual {r:.3e})", y)
        H = model.hess_xy(x, y)
        if sphere:
            By = model.tangent_basis(y)
            M = Bx.T @ H @ By
            rhs = Bx.T @ F
        else:
            M, rhs = H, F
        if abs(np.linalg.det(M)) < det_floor:
            raise NewtonError("singular", "mixed Hessian is singular at an iterate", y)
        # d(-grad_x c)/dy = -hess_xy, so the Newton step solves hess_xy dy = F
        step = np.linalg.solve(M, rhs)
        if sphere:
            step = By @ step
        lam = 1.0
        seen_valid = False
        for _ in range(MAX_HALVINGS + 1):
            cand = model.move(y, lam * step)
            if model.valid(x, cand):
                seen_valid = True
                Fc = resid(cand)
                rc = float(np.linalg.norm(Fc))
                if rc < r:
                    break
            lam *= 0.5
        else:
            if not seen_valid:
                raise NewtonError("invalid", "Newton iterate left the valid region", y)
            raise NewtonError("no_descent", f"step halving failed to reduce the residual {r:.3e}", y)
        y, F, r = cand, Fc, rc
        it += 1
    return CotangentTarget(x=x, p=p, y=y, residual=r, iterations=it)


@dataclass
class CSegment:
    x: np.ndarray
    y0: np.ndarray
    y1: np.ndarray
    thetas: np.ndarray
    points: np.ndarray

    def midpoint(self) -> np.ndarray:
        return self.points[len(self.points) // 2]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["theta"] + [f"y{i}" for i in range(self.points.shape[1])])
            for t, pt in zip(self.thetas, self.points):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in pt])


def c_segment(model: CostModel, x, y0, y1, steps: int, max_depth: int = 10) -> CSegment:
    """Points T_x((1 - theta) v0 + theta v1), v_i = -grad_x c(x, y_i), theta uniform in [0, 1].

    Each point is seeded with its predecessor; if that fails, the theta
    interval is bisected and walked in smaller increments.
    """
    if steps < 2:
        raise ValueError("steps must be >= 2")
    x = np.asarray(x, dtype=float)
    y0 = np.asarray(y0, dtype=float)
    y1 = np.asarray(y1, dtype=float)
    for yy in (y0, y1):
        if not model.valid(x, yy):
            raise NewtonError("invalid", "segment endpoint not valid for x", yy)
    thetas = np.linspace(0.0, 1.0, steps)
    if np.array_equal(y0, y1):
        return CSegment(x, y0, y1, thetas, np.tile(y0, (steps, 1)))
    v0, v1 = cotangent(model, x, y0), cotangent(model, x, y1)

    def solve(theta, seed):
        return c_exponential(model, x, (1.0 - theta) * v0 + theta * v1, seed).y

    def walk(t_from, y_from, t_to, depth):
        try:
            return solve(t_to, y_from)
        except NewtonError as err:
            if depth >= max_depth:
                err.theta = t_to
                raise
        t_mid = 0.5 * (t_from + t_to)
        y_mid = walk(t_from, y_from, t_mid, depth + 1)
        return walk(t_mid, y_mid, t_to, depth + 1)

    pts = [y0.copy()]
    for k in range(1, steps):
        if k == steps - 1:
            pts.append(y1.copy())
            break
        pts.append(walk(thetas[k - 1], pts[-1], thetas[k], 0))
    return CSegment(x, y0, y1, thetas, np.array(pts))


@dataclass
class A1A2Report:
    cost: dict
    x_samples: int
    y_samples: int
    seed: int
    min_abs_det: float = np.inf
    injectivity_violations: int = 0
    midpoint_trials: int = 0
    midpoint_hits: int = 0
    worst_x: list = field(default_factory=list)

    @property
    def convexity_score(self) -> float:
        return self.midpoint_hits / self.midpoint_trials if self.midpoint_trials else 1.0

    def as_dict(self) -> dict:
        return {
            "cost": self.cost,
            "x_samples": self.x_samples,
            "y_samples": self.y_samples,
            "seed": self.seed,
            "min_abs_det": self.min_abs_det,
            "injectivity_violations": self.injectivity_violations,
            "convexity_score": self.convexity_score,
        }


def check_A1_A2(
    model: CostModel,
    x_samples: int,
    y_samples: int,
    seed: int,
    box: tuple[float, float] = (0.0, 1.0),
    accept: Callable[[np.ndarray, np.ndarray], bool] | None = None,
    midpoint_pairs: int = 20,
    collision_tol: float = 1e-8,
) -> A1A2Report:
    """Sampled evidence for A1 (injectivity of y -> -grad_x c) and A2 (det D2_xy c != 0).

    For each sampled x a y-cloud (in ``box`` for Euclidean costs, filtered by
    validity and ``accept``) is mapped to cotangent space.  Collisions closer
    than ``collision_tol`` between distinct y count as A1 violations.  The
    convexity score is the fraction of cotangent midpoints whose preimage
    exists and lies in the admissible y-set.
    """
    if x_samples < 2 or y_samples < 2:
        raise ValueError("sample counts must be >= 2")
    rng = np.random.default_rng(seed)
    rep = A1A2Report(model.descriptor(), x_samples, y_samples, seed)
    sphere = model.chart == SPHERE

    def admissible(xx, yy):
        if not model.valid(xx, yy):
            return False
        if not sphere and np.any((yy < box[0]) | (yy > box[1])):
            return False
        return accept is None or bool(accept(xx, yy))

    for _ in range(x_samples):
        x, _unused = sample_valid_pair(model, rng, box, accept)
        ys = []
        for _ in range(100 * y_samples):
            y = geo.random_sphere_points(rng, 1, model.dim)[0] if sphere else rng.uniform(*box, size=model.dim)
            if admissible(x, y):
                ys.append(y)
                if len(ys) == y_samples:
                    break
        if len(ys) < 2:
            continue
        ys = np.array(ys)
        P = np.array([cotangent(model, x, y) for y in ys])
        for y in ys:
            d = abs(model.mixed_det(x, y))
            if d < rep.min_abs_det:
                rep.min_abs_det = d
                rep.worst_x = [x.tolist(), y.tolist()]
        for i, j in cKDTree(P).query_pairs(collision_tol):
            if np.linalg.norm(ys[i] - ys[j]) > collision_tol:
                rep.injectivity_violations += 1
        for _ in range(midpoint_pairs):
            i, j = rng.choice(len(ys), size=2, replace=False)
            rep.midpoint_trials += 1
            try:
                y = c_exponential(model, x, 0.5 * (P[i] + P[j]), ys[i]).y
            except NewtonError:
                continue
            if admissible(x, y):
                rep.midpoint_hits += 1
    return rep
