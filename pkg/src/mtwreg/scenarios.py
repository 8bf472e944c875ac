"""Canonical instances shared by the command line and the acceptance suite."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import geometry as geo
from .cost_models import SPHERE, CostModel, make_cost
from .ctransform import (
    ContactSet,
    GridDomain,
    build_phibar,
    c_transform,
    contact_set,
    segment_strip,
    spread_targets,
)
from .domains import PairDomain
from .mtw import SweepReport, sweep_condition
from .ot_solver import (
    DiscreteMeasure,
    extract_map_diagnostics,
    solve_exact,
    stay_away_check,
    two_bump_strip_target,
)


@dataclass
class Counterexample:
    """Sampled curvature minimum of an Aw-violating cost and the phibar targets around it."""

    model: CostModel
    sweep: SweepReport
    x0: np.ndarray
    y: np.ndarray
    xi: np.ndarray
    nu: np.ndarray
    y0: np.ndarray
    y1: np.ndarray

    def as_dict(self) -> dict:
        return {
            "cost": self.model.descriptor(),
            "curvature": self.sweep.min_value,
            "x0": self.x0.tolist(), "y": self.y.tolist(),
            "xi": self.xi.tolist(), "nu": self.nu.tolist(),
            "y0": self.y0.tolist(), "y1": self.y1.tolist(),
        }


def counterexample(
    model: CostModel | None = None,
    domain: PairDomain | None = None,
    samples: int = 500,
    seed: int = 1,
    spread: float = 1.0,
    workers: int = 1,
) -> Counterexample:
    """Sweep ``model`` (default |x-y|^4 in the plane) and build y0, y1 at the argmin."""
    model = make_cost("power_p", {"p": 4}, 2) if model is None else model
    domain = PairDomain(min_dist=0.3) if domain is None else domain
    rep = sweep_condition(model, domain, samples, seed, workers=workers)
    if rep.argmin is None or rep.verdict != "violated":
        raise ValueError(f"sweep found no violation (verdict {rep.verdict})")
    s = rep.argmin.pair
    y0, y1 = spread_targets(model, s.x, s.y, s.nu, spread)
    return Counterexample(model, rep, s.x, s.y, s.xi, s.nu, y0, y1)


def source_grid(model: CostModel, x0, half_width: float, n: int) -> GridDomain:
    """n x n grid centred on x0 (n odd keeps x0 a node)."""
    x0 = np.asarray(x0, dtype=float)
    if model.chart == SPHERE:
        return GridDomain.sphere_patch(x0, half_width, n)
    return GridDomain.box(x0 - half_width, x0 + half_width, (n,) * len(x0))


def phibar_contact(
    model: CostModel,
    x0,
    y0,
    y1,
    half_width: float = 0.15,
    n: int = 61,
    nodes_along: int = 1000,
    strip_half_width: int = 8,
    tol: float | None = None,
) -> ContactSet:
    """Contact set at x0 of phibar built on a source grid around x0.

    The target grid is a strip around the c-segment [y0, y1]_x0.
    """
    src = source_grid(model, x0, half_width, n)
    tgt = segment_strip(model, x0, y0, y1, nodes_along, strip_half_width)
    pbar = build_phibar(model, x0, y0, y1, src)
    return contact_set(model, pbar, c_transform(model, pbar, tgt), x0, tol)


def discontinuity_run(
    model: CostModel,
    x0,
    y0,
    y1,
    n: int = 40,
    half_width: float = 0.17,
    target_ratio: float = 0.45,
    floor: float = 0.55,
    near_spacings: float = 10.0,
    pairs: int = 200,
    seed: int = 0,
) -> dict:
    """Transport a uniform n x n source around x0 onto the two-bump target at y0, y1.

    Returns the solver result with map diagnostics over the whole grid and
    restricted to adjacent pairs within ``near_spacings`` of x0; jumps are
    also reported in units of the source spacing.
    """
    x0 = np.asarray(x0, dtype=float)
    src = GridDomain.box(x0 - half_width, x0 + half_width, (n,) * len(x0))
    mu0 = DiscreteMeasure.uniform(src.points)
    mu1 = two_bump_strip_target(y0, y1, target_ratio * src.spacing, floor, n ** len(x0))
    res = solve_exact(model, mu0, mu1)
    full = extract_map_diagnostics(res, pairs, seed)
    near = extract_map_diagnostics(res, pairs, seed, near=x0, near_radius=near_spacings * src.spacing)
    return {
        "result": res,
        "spacing": src.spacing,
        "diagnostics": full,
        "max_jump_over_spacing": full["max_jump"] / src.spacing,
        "near_max_jump_over_spacing": near["max_jump"] / src.spacing,
        "near_max_jump_sources": near["max_jump_sources"],
    }


def cloud_spacing(points: np.ndarray) -> float:
    """Median geodesic nearest-neighbour distance of a sphere cloud."""
    d, _ = cKDTree(points).query(points, k=2)
    return float(np.median(2 * np.arcsin(np.minimum(d[:, 1] / 2, 1.0))))


def rotated_cloud(count: int = 500, angle: float = math.pi / 4, axis=(1.0, 1.0, 1.0)):
    """Fibonacci cloud on S^2 and its rigid rotation."""
    X = geo.fibonacci_sphere(count)
    return X, X @ geo.rotation_matrix(np.asarray(axis, dtype=float), angle).T


def bounded_below_weights(count: int, m: float, seed: int) -> np.ndarray:
    """Random probability weights with every weight >= m / count."""
    if not 0.0 < m < 1.0:
        raise ValueError("m must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    w = rng.random(count)
    return m / count + (1.0 - m) * w / w.sum()


def sphere_stay_away(count: int = 500, angle: float = math.pi / 4, m: float = 0.5,
                     seed: int = 0, cut_margin: float = 1e-6) -> dict:
    """Uniform-vs-rotated and density-bounded-below sphere instances."""
    model = make_cost("sphere_sq_dist", {"cut_margin": cut_margin}, 3)
    X, Y = rotated_cloud(count, angle)
    h = cloud_spacing(X)
    rot = solve_exact(model, DiscreteMeasure.uniform(X), DiscreteMeasure.uniform(Y))
    w = bounded_below_weights(count, m, seed)
    low = solve_exact(model, DiscreteMeasure.uniform(X), DiscreteMeasure(Y, w))
    return {
        "spacing": h,
        "angle": angle,
        "rotated": stay_away_check(rot, "sphere_cutlocus"),
        "rotated_bound": angle + 2 * h,
        "rotated_checks": rot.check(),
        "bounded_below": stay_away_check(low, "sphere_cutlocus"),
        "bounded_below_checks": low.check(),
        "m": m,
    }


def antenna_stay_away(count: int = 500, angle: float = math.pi / 4, m: float = 0.5, seed: int = 0) -> dict:
    """-log|x - y| on S^2: near-uniform source, target density >= m x uniform."""
    model = make_cost("neg_log", {}, 3)
    X, Y = rotated_cloud(count, angle)
    w = bounded_below_weights(count, m, seed)
    res = solve_exact(model, DiscreteMeasure.uniform(X), DiscreteMeasure(Y, w))
    out = stay_away_check(res, "antenna_diagonal")
    return {"stay_away": out, "epsilon0": out["extremal_distance"], "checks": res.check(), "m": m,
            "result": res}
