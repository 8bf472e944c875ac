"""Exact discrete optimal transport with Kantorovich potentials and map diagnostics."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment, linprog
from scipy.sparse import coo_matrix, csr_matrix
from scipy.spatial import cKDTree

from . import geometry as geo
from .cost_models import SPHERE, CostModel

FEAS_TOL = 1e-8
GAP_TOL = 1e-6
MAX_PAIRS = 10**7


class TransportError(ValueError):
    pass


@dataclass
class DiscreteMeasure:
    support: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.support = np.atleast_2d(np.asarray(self.support, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != (len(self.support),):
            raise TransportError("one weight per support point required")
        if np.any(self.weights < 0):
            raise TransportError("weights must be nonnegative")
        if abs(self.weights.sum() - 1.0) > 1e-10:
            raise TransportError(f"weights sum to {self.weights.sum():.12g}, not 1")

    @classmethod
    def uniform(cls, points) -> "DiscreteMeasure":
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return cls(pts, np.full(len(pts), 1.0 / len(pts)))

    @classmethod
    def from_csv(cls, path) -> "DiscreteMeasure":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, :-1], data[:, -1])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{i}" for i in range(self.support.shape[1])] + ["weight"])
            for p, m in zip(self.support, self.weights):
                w.writerow([repr(float(c)) for c in p] + [repr(float(m))])

    def __len__(self) -> int:
        return len(self.weights)

    def is_uniform(self) -> bool:
        return bool(np.all(np.abs(self.weights * len(self) - 1.0) <= 1e-12))


@dataclass
class TransportResult:
    plan: csr_matrix
    phi: np.ndarray
    psi: np.ndarray
    cost_total: float
    dual_value: float
    map: np.ndarray
    split_fraction: np.ndarray
    source: DiscreteMeasure
    target: DiscreteMeasure
    cost_matrix: np.ndarray = field(repr=False)
    method: str = ""
    chart: str = "euclidean"

    @property
    def duality_gap(self) -> float:
        return abs(self.cost_total - self.dual_value)

    def invariants(self) -> dict:
        """Marginal error, dual feasibility, complementary slackness, duality gap."""
        P = self.plan
        slack = self.phi[:, None] + self.psi[None, :] + self.cost_matrix
        rows, cols = P.nonzero()
        return {
            "marginal_error": float(max(
                np.abs(np.asarray(P.sum(axis=1)).ravel() - self.source.weights).max(),
                np.abs(np.asarray(P.sum(axis=0)).ravel() - self.target.weights).max(),
            )),
            "dual_feasibility": float(slack.min()),
            "complementary_slackness": float(slack[rows, cols].max()) if len(rows) else 0.0,
            "duality_gap": self.duality_gap,
        }

    def check(self) -> list[str]:
        inv = self.invariants()
        bad = []
        if inv["marginal_error"] > FEAS_TOL:
            bad.append("marginals")
        if inv["dual_feasibility"] < -FEAS_TOL:
            bad.append("dual feasibility")
        if inv["complementary_slackness"] > FEAS_TOL:
            bad.append("complementary slackness")
        if inv["duality_gap"] > GAP_TOL * (1.0 + abs(self.cost_total)):
            bad.append("duality gap")
        return bad

    def mapped_points(self) -> np.ndarray:
        return self.target.support[self.map]

    def to_csv(self, directory) -> None:
        os.makedirs(directory, exist_ok=True)
        P = self.plan.tocoo()
        order = np.lexsort((P.col, P.row))
        with open(os.path.join(directory, "plan.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["i", "j", "mass"])
            for k in order:
                w.writerow([int(P.row[k]), int(P.col[k]), repr(float(P.data[k]))])
        with open(os.path.join(directory, "duals_source.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["i", "phi"])
            w.writerows([i, repr(float(v))] for i, v in enumerate(self.phi))
        with open(os.path.join(directory, "duals_target.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["j", "psi"])
            w.writerows([j, repr(float(v))] for j, v in enumerate(self.psi))
        with open(os.path.join(directory, "map.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["i", "j", "split_fraction"])
            w.writerows([i, int(j), repr(float(s))] for i, (j, s) in enumerate(zip(self.map, self.split_fraction)))


def quantize_counts(weights, total: int) -> np.ndarray:
    """Largest-remainder rounding of ``weights`` (summing to 1) to integers summing to ``total``."""
    w = np.asarray(weights, dtype=float)
    k = w / w.sum() * total
    c = np.floor(k).astype(int)
    c[np.argsort(-(k - c), kind="stable")[: total - int(c.sum())]] += 1
    return c


def two_bump_strip_target(y0, y1, spacing: float, floor: float, total: int) -> DiscreteMeasure:
    """Mollified two-bump measure on a line of nodes through y0 and y1.

    Nodes are spaced ``spacing`` apart along the straight line, extending
    3 spacings past each end.  Each bump is a normalized truncated Gaussian
    (sigma = spacing, radius 3 spacings) carrying half the mass; a fraction
    ``floor`` of the mass is spread uniformly.  Weights are rounded to
    multiples of 1/``total`` so that a uniform source of ``total`` atoms
    reduces to an assignment problem.  Nodes with zero weight are dropped.
    """
    y0 = np.asarray(y0, dtype=float)
    y1 = np.asarray(y1, dtype=float)
    d = y1 - y0
    length = float(np.linalg.norm(d))
    if length == 0.0:
        raise TransportError("bump centres must differ")
    if not 0.0 <= floor < 1.0:
        raise TransportError("floor must lie in [0, 1)")
    s = np.arange(-3 * spacing, length + 3 * spacing + 1e-12, spacing)
    pts = y0 + s[:, None] * (d / length)
    w = np.zeros(len(pts))
    for c in (y0, y1):
        r = np.linalg.norm(pts - c, axis=1)
        k = np.where(r <= 3 * spacing, np.exp(-0.5 * (r / spacing) ** 2), 0.0)
        w += 0.5 * k / k.sum()
    w = (1 - floor) * w + floor / len(pts)
    cnt = quantize_counts(w, total)
    keep = cnt > 0
    return DiscreteMeasure(pts[keep], cnt[keep] / total)


def cost_matrix(model: CostModel, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    Xb, Yb = X[:, None, :], Y[None, :, :]
    if not np.all(model.valid(Xb, Yb)):
        raise TransportError(f"invalid cost pair for {model.name} between the supports")
    return np.asarray(model.eval(Xb, Yb), dtype=float)


def _assignment_duals(C: np.ndarray, sigma: np.ndarray, max_rounds: int | None = None):
    """Potentials u, v with u_i + v_j <= C_ij and equality on (i, sigma(i)).

    v solves v_j <= v_sigma(i) + C_ij - C_{i sigma(i)} as a shortest-path
    problem from a virtual source (Bellman-Ford, vectorized); optimality of
    sigma rules out negative cycles.
    """
    n = len(sigma)
    W = C - C[np.arange(n), sigma][:, None]
    v = np.zeros(C.shape[1])
    # rounding can create cycles of weight ~ -1e-16; relax only real improvements
    eps = 1e-14 * (1.0 + float(np.max(np.abs(C))))
    for _ in range(max_rounds or n + 1):
        cand = np.min(v[sigma][:, None] + W, axis=0)
        better = cand < v - eps
        if not better.any():
            break
        v = np.where(better, cand, v)
    else:
        raise TransportError("assignment duals did not converge (non-optimal assignment)")
    u = C[np.arange(n), sigma] - v[sigma]
    return u, v


def _integer_counts(mu: DiscreteMeasure, n: int) -> np.ndarray | None:
    k = mu.weights * n
    r = np.rint(k)
    return r.astype(int) if np.all(np.abs(k - r) <= 1e-9) and r.sum() == n else None


def _tighten(C, u, v):
    """Make (u, v) c-conjugate on the supports: v = min_i (C - u), u = min_j (C - v)."""
    v = np.min(C - u[:, None], axis=0)
    u = np.min(C - v[None, :], axis=1)
    return u, v


def solve_exact(
    model: CostModel,
    mu0: DiscreteMeasure,
    mu1: DiscreteMeasure,
    method: str = "auto",
    lp_method: str = "highs-ds",
) -> TransportResult:
    """Exact discrete optimal transport for c(x, y).

    ``method="auto"`` picks the Hungarian algorithm when mu0 is uniform and
    every weight of mu1 is an integer multiple of 1/|mu0| (targets are
    replicated by multiplicity), and the HiGHS LP otherwise.  Dual
    potentials are made c-conjugate on the supports, with phi = -u and
    psi = -v so that phi(x) + psi(y) >= -c(x, y).
    """
    if mu0.support.shape[1] != mu1.support.shape[1]:
        raise TransportError("supports live in different dimensions")
    n0, n1 = len(mu0), len(mu1)
    if n0 * n1 > MAX_PAIRS:
        raise TransportError("instance too large for the exact solver")
    C = cost_matrix(model, mu0.support, mu1.support)
    counts = _integer_counts(mu1, n0) if mu0.is_uniform() else None
    if method == "auto":
        method = "assignment" if counts is not None else "lp"
    if method == "assignment":
        if counts is None:
            raise TransportError("assignment path needs uniform mu0 and mu1 weights in multiples of 1/|mu0|")
        cols = np.repeat(np.arange(n1), counts)
        Cr = C[:, cols]
        rows, sigma = linear_sum_assignment(Cr)
        u, vr = _assignment_duals(Cr, sigma)
        # replicas of one target share a potential: take the min (still feasible)
        # replicas of a target carry identical columns, hence identical potentials;
        # targets without replicas get theirs from the c-conjugation below
        v = np.zeros(n1)
        v[cols] = vr
        plan = coo_matrix((np.full(n0, 1.0 / n0), (rows, cols[sigma])), shape=(n0, n1)).tocsr()
    elif method == "lp":
        A_rows = np.concatenate([np.repeat(np.arange(n0), n1), n0 + np.tile(np.arange(n1), n0)])
        A_cols = np.concatenate([np.arange(n0 * n1), np.arange(n0 * n1)])
        A = coo_matrix((np.ones(2 * n0 * n1), (A_rows, A_cols)), shape=(n0 + n1, n0 * n1)).tocsr()
        b = np.concatenate([mu0.weights, mu1.weights])
        res = linprog(
            C.ravel(), A_eq=A, b_eq=b, bounds=(0, None), method=lp_method,
            options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
        )
        if res.status != 0:
            raise TransportError(f"LP solver failed: {res.message}")
        x = np.where(res.x > 1e-15, res.x, 0.0).reshape(n0, n1)
        plan = csr_matrix(x)
        y = res.eqlin.marginals
        u, v = y[:n0].copy(), y[n0:].copy()
    else:
        raise TransportError(f"unknown method {method!r}")
    u, v = _tighten(C, u, v)
    phi, psi = -u, -v
    cost_total = float(plan.multiply(C).sum())
    dual_value = float(mu0.weights @ u + mu1.weights @ v)
    row_mass = np.asarray(plan.sum(axis=1)).ravel()
    best = np.asarray(plan.argmax(axis=1)).ravel()
    top = plan.max(axis=1).toarray().ravel()
    split = np.where(row_mass > 0, 1.0 - top / np.where(row_mass > 0, row_mass, 1.0), 0.0)
    return TransportResult(plan, phi, psi, cost_total, dual_value, best, split, mu0, mu1, C, method, model.chart)


# ---------------------------------------------------------------------------
# Diagnostics


def _dist(chart_sphere: bool, a, b):
    return geo.geodesic_distance(a, b) if chart_sphere else np.linalg.norm(np.asarray(a) - np.asarray(b), axis=-1)


def adjacent_pairs(points: np.ndarray, factor: float = 1.5) -> np.ndarray:
    """Pairs of support points closer than ``factor`` x the median nearest-neighbour distance."""
    tree = cKDTree(points)
    d, _ = tree.query(points, k=2)
    h = float(np.median(d[:, 1]))
    return np.array(sorted(tree.query_pairs(factor * h)), dtype=int).reshape(-1, 2), h


def extract_map_diagnostics(
    result: TransportResult,
    pairs: int,
    seed: int,
    near: np.ndarray | None = None,
    near_radius: float | None = None,
    split_tol: float = 1e-9,
) -> dict:
    """Empirical modulus of continuity of the extracted map.

    Reports the largest image jump between adjacent sources (optionally only
    for pairs within ``near_radius`` of ``near``), a table of
    (|x1 - x0|, |G(x1) - G(x0)|) over ``pairs`` random source pairs, and the
    log-log slope of that table.  Sources whose mass is split are reported,
    and resolved to their largest-weight target.
    """
    src = result.source.support
    sphere = result.chart == SPHERE
    G = result.mapped_points()
    adj, h = adjacent_pairs(src)
    out = {"spacing": h, "split_sources": int(np.sum(result.split_fraction > split_tol)),
           "max_split_fraction": float(result.split_fraction.max())}
    if len(adj):
        jumps = _dist(sphere, G[adj[:, 0]], G[adj[:, 1]])
        sel = np.ones(len(adj), dtype=bool)
        if near is not None and near_radius is not None:
            mid = 0.5 * (src[adj[:, 0]] + src[adj[:, 1]])
            sel = np.linalg.norm(mid - np.asarray(near), axis=1) <= near_radius
        if sel.any():
            k = int(np.flatnonzero(sel)[np.argmax(jumps[sel])])
            out.update({
                "max_jump": float(jumps[k]),
                "max_jump_over_spacing": float(jumps[k] / h),
                "max_jump_sources": [src[adj[k, 0]].tolist(), src[adj[k, 1]].tolist()],
            })
    rng = np.random.default_rng(seed)
    i = rng.integers(0, len(src), size=pairs)
    j = rng.integers(0, len(src), size=pairs)
    keep = i != j
    dx = _dist(sphere, src[i[keep]], src[j[keep]])
    dg = _dist(sphere, G[i[keep]], G[j[keep]])
    out["modulus_table"] = np.column_stack([dx, dg]).tolist()
    pos = (dx > 0) & (dg > 0)
    out["loglog_slope"] = float(np.polyfit(np.log(dx[pos]), np.log(dg[pos]), 1)[0]) if pos.sum() >= 2 else math.nan
    return out


def stay_away_check(result: TransportResult, geometry: str) -> dict:
    """Extremal distance between sources and their images.

    ``sphere_cutlocus``: max d(x, G(x)) and its margin to pi.
    ``antenna_diagonal``: min d(x, G(x)) and its margin to 0.
    """
    X, Y = result.source.support, result.mapped_points()
    if geometry not in ("sphere_cutlocus", "antenna_diagonal"):
        raise TransportError(f"unknown geometry {geometry!r}")
    if X.shape[1] < 2 or not (np.allclose(np.linalg.norm(X, axis=1), 1.0, atol=1e-10)
                              and np.allclose(np.linalg.norm(Y, axis=1), 1.0, atol=1e-10)):
        raise TransportError("stay-away checks need supports on the unit sphere")
    d = geo.geodesic_distance(X, Y)
    if geometry == "sphere_cutlocus":
        k = int(np.argmax(d))
        return {"geometry": geometry, "extremal_distance": float(d[k]), "margin": float(math.pi - d[k]), "index": k}
    k = int(np.argmin(d))
    return {"geometry": geometry, "extremal_distance": float(d[k]), "margin": float(d[k]), "index": k}


def uniqueness_probe(
    model: CostModel,
    mu0: DiscreteMeasure,
    mu1: DiscreteMeasure,
    perturbation_seeds: int,
    seed: int = 0,
) -> dict:
    """Re-solve under permuted input orders and alternating LP pivoting rules.

    Returns the max over runs of |phi_a - phi_b| after removing the
    mu0-weighted mean.  ``flagged`` marks instances where the duals are not
    expected to be unique (a single atom, or zero source weights).
    """
    base = solve_exact(model, mu0, mu1, method="lp")

    def centered(phi):
        return phi - mu0.weights @ phi

    ref = centered(base.phi)
    rng = np.random.default_rng(seed)
    worst = 0.0
    methods = ("highs-ds", "highs-ipm")
    for k in range(perturbation_seeds):
        p0 = rng.permutation(len(mu0))
        p1 = rng.permutation(len(mu1))
        res = solve_exact(
            model,
            DiscreteMeasure(mu0.support[p0], mu0.weights[p0]),
            DiscreteMeasure(mu1.support[p1], mu1.weights[p1]),
            method="lp", lp_method=methods[k % 2],
        )
        phi = np.empty(len(mu0))
        phi[p0] = res.phi
        worst = max(worst, float(np.max(np.abs(centered(phi) - ref))))
    flagged = len(mu0) == 1 or bool(np.any(mu0.weights <= 0))
    return {"discrepancy": worst, "runs": perturbation_seeds, "flagged": flagged}
