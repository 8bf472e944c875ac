"""Discrete c-convex analysis on grids.

Transforms are exact full scans, chunked over target points.  A potential
on a grid is a pair (domain, values); contact sets are argmax bands whose
connectivity is read off the grid's neighbour graph.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from . import geometry as geo
from .cexp import c_exponential, c_segment, cotangent
from .cost_models import SPHERE, CostModel

CHUNK = 256


class GridError(ValueError):
    pass


@dataclass
class GridDomain:
    kind: str
    points: np.ndarray
    spacing: float
    bounds: tuple | None = None
    shape: tuple | None = None
    k_neighbors: int = 6
    _adj: csr_matrix | None = field(default=None, repr=False)

    @classmethod
    def box(cls, lo, hi, shape) -> "GridDomain":
        """Tensor grid on the box [lo, hi] (per-axis or scalar bounds)."""
        shape = tuple(int(s) for s in np.atleast_1d(shape))
        n = len(shape)
        lo = np.broadcast_to(np.asarray(lo, dtype=float), (n,)).copy()
        hi = np.broadcast_to(np.asarray(hi, dtype=float), (n,)).copy()
        if any(s < 2 for s in shape) or np.any(hi <= lo):
            raise GridError("box grid needs >= 2 nodes per axis and hi > lo")
        axes = [np.linspace(lo[i], hi[i], shape[i]) for i in range(n)]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
        spacing = float(np.max((hi - lo) / (np.array(shape) - 1)))
        return cls("box", pts, spacing, (lo, hi), shape)

    @classmethod
    def sphere_points(cls, points, k: int = 6) -> "GridDomain":
        pts = geo.normalize(np.asarray(points, dtype=float))
        d, _ = cKDTree(pts).query(pts, k=2)
        spacing = float(np.median(2 * np.arcsin(np.minimum(d[:, 1] / 2, 1.0))))
        dom = cls("sphere_points", pts, spacing, k_neighbors=k)
        if d[:, 1].min() < 1e-12:
            raise GridError("sphere points are not pairwise distinct")
        if connected_components(dom.adjacency(), directed=False)[0] != 1:
            raise GridError("nearest-neighbour graph is disconnected")
        return dom

    @classmethod
    def sphere_patch(cls, center, half_width: float, shape, k: int = 6) -> "GridDomain":
        """exp_center of a square grid in normal coordinates (dim 3 only)."""
        center = geo.normalize(np.asarray(center, dtype=float))
        B = geo.tangent_basis(center)
        m = int(shape) if np.isscalar(shape) else int(shape[0])
        u = np.linspace(-half_width, half_width, m)
        U = np.stack(np.meshgrid(u, u, indexing="ij"), axis=-1).reshape(-1, 2)
        pts = geo.sphere_exp(center, U @ B.T)
        dom = cls.sphere_points(pts, k)
        dom.bounds = (center, half_width)
        dom.shape = (m, m)
        return dom

    def subset(self, mask) -> "GridDomain":
        """Restriction to the nodes in ``mask`` with the induced neighbour graph."""
        mask = np.asarray(mask, dtype=bool)
        keep = np.flatnonzero(mask)
        if len(keep) == 0:
            raise GridError("empty subset")
        adj = self.adjacency()[keep][:, keep].tocsr()
        if connected_components(adj, directed=False)[0] != 1:
            raise GridError("subset is disconnected")
        return GridDomain(self.kind + "_subset", self.points[keep], self.spacing, self.bounds, None,
                          self.k_neighbors, adj)

    @property
    def size(self) -> int:
        return len(self.points)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def adjacency(self) -> csr_matrix:
        if self._adj is not None:
            return self._adj
        N = self.size
        if self.kind == "box":
            idx = np.arange(N).reshape(self.shape)
            rows, cols = [], []
            for ax in range(len(self.shape)):
                a = np.take(idx, range(self.shape[ax] - 1), axis=ax).ravel()
                b = np.take(idx, range(1, self.shape[ax]), axis=ax).ravel()
                rows += [a, b]
                cols += [b, a]
            r, c = np.concatenate(rows), np.concatenate(cols)
        else:
            _, nb = cKDTree(self.points).query(self.points, k=self.k_neighbors + 1)
            r = np.repeat(np.arange(N), self.k_neighbors)
            c = nb[:, 1:].ravel()
            r, c = np.concatenate([r, c]), np.concatenate([c, r])
        adj = coo_matrix((np.ones(len(r)), (r, c)), shape=(N, N)).tocsr()
        adj.data[:] = 1.0
        self._adj = adj
        return adj

    def nearest(self, x) -> int:
        return int(np.argmin(np.linalg.norm(self.points - np.asarray(x, dtype=float), axis=1)))

    def index_of(self, x, atol: float = 1e-12) -> int | None:
        i = self.nearest(x)
        return i if np.linalg.norm(self.points[i] - x) <= atol else None


@dataclass
class GridPotential:
    domain: GridDomain
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.domain.size,):
            raise GridError("one value per grid point required")
        if not np.all(np.isfinite(self.values)):
            raise GridError("potential values must be finite")

    def shifted(self, k: float) -> "GridPotential":
        return GridPotential(self.domain, self.values + k)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{i}" for i in range(self.domain.dim)] + ["value"])
            for p, v in zip(self.domain.points, self.values):
                w.writerow([repr(float(c)) for c in p] + [repr(float(v))])

    @classmethod
    def from_csv(cls, path, domain: GridDomain | None = None) -> "GridPotential":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        pts, vals = data[:, :-1], data[:, -1]
        if domain is None:
            domain = GridDomain("points", pts, float("nan"))
        elif not np.array_equal(domain.points, pts):
            raise GridError("CSV points do not match the domain")
        return cls(domain, vals)


def spread_targets(model: CostModel, x0, y, nu, spread: float = 1.0):
    """Targets y0, y1 = T_x0(p0 -/+ spread |p0| nu) with p0 = -grad_x c(x0, y).

    This is the pair used by the phibar counterexample around a sampled
    curvature minimum (x0, y, xi, nu).
    """
    x0 = np.asarray(x0, dtype=float)
    y = np.asarray(y, dtype=float)
    nu = np.asarray(nu, dtype=float)
    p0 = cotangent(model, x0, y)
    step = spread * float(np.linalg.norm(p0)) * nu / np.linalg.norm(nu)
    y0 = c_exponential(model, x0, p0 - step, y).y
    y1 = c_exponential(model, x0, p0 + step, y).y
    return y0, y1


def segment_strip(
    model: CostModel,
    x0,
    y0,
    y1,
    nodes_along: int = 1000,
    half_width: int = 8,
) -> GridDomain:
    """Grid nodes within ``half_width`` spacings of the c-segment [y0, y1]_x0.

    The spacing is the segment length over ``nodes_along``.  Resolving the
    segment finely while keeping few nodes away from it is what lets a
    contact band separate into pieces.  On the sphere the strip is laid out
    in normal coordinates at the segment midpoint and mapped by exp.
    """
    coarse = c_segment(model, x0, y0, y1, 201).points
    length = float(np.sum(model.distance(coarse[:-1], coarse[1:])))
    h = length / nodes_along
    if model.chart == SPHERE:
        centre = geo.normalize(coarse[100])
        B = geo.tangent_basis(centre)
        coarse = geo.sphere_log(centre, coarse) @ B
    t = np.linspace(0, 200, 20 * 200 + 1)
    seg = np.column_stack([np.interp(t, np.arange(201), coarse[:, k]) for k in range(coarse.shape[1])])
    lo = seg.min(0) - half_width * h
    shape = tuple(np.ceil((seg.max(0) + half_width * h - lo) / h).astype(int) + 1)
    box = GridDomain.box(lo, lo + (np.array(shape) - 1) * h, shape)
    d, _ = cKDTree(seg).query(box.points)
    keep = d <= half_width * h
    if model.chart != SPHERE:
        return box.subset(keep)
    return GridDomain.sphere_points(geo.sphere_exp(centre, box.points[keep] @ B.T))


def _pair_costs(model: CostModel, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """C[j, i] = c(X[i], Y[j]); raises on any invalid pair."""
    Xb, Yb = X[None, :, :], Y[:, None, :]
    if not np.all(model.valid(Xb, Yb)):
        raise GridError(f"invalid cost pair for {model.name} on the grid product")
    return model.eval(Xb, Yb)


def _sup_transform(model, src_pts, src_vals, dst_pts, swap: bool) -> np.ndarray:
    out = np.empty(len(dst_pts))
    for a in range(0, len(dst_pts), CHUNK):
        D = dst_pts[a : a + CHUNK]
        C = _pair_costs(model, D, src_pts).T if swap else _pair_costs(model, src_pts, D)
        out[a : a + CHUNK] = np.max(-C - src_vals[None, :], axis=1)
    return out


def c_transform(model: CostModel, phi: GridPotential, target: GridDomain) -> GridPotential:
    """phi^c(y) = max_x { -c(x, y) - phi(x) } over the grid of ``phi``."""
    return GridPotential(target, _sup_transform(model, phi.domain.points, phi.values, target.points, swap=False))


def c_star_transform(model: CostModel, psi: GridPotential, source: GridDomain) -> GridPotential:
    """psi^{c*}(x) = max_y { -c(x, y) - psi(y) } over the grid of ``psi``."""
    return GridPotential(source, _sup_transform(model, psi.domain.points, psi.values, source.points, swap=True))


def c_convexify(model: CostModel, phi: GridPotential, target: GridDomain | None = None) -> GridPotential:
    """phi^{c c*}: the largest c-convex minorant of phi relative to ``target``."""
    target = phi.domain if target is None else target
    return c_star_transform(model, c_transform(model, phi, target), phi.domain)


def max_gradient_bound(model: CostModel, x, target: GridDomain) -> float:
    return float(max(np.linalg.norm(model.grad_y(x, y)) for y in target.points))


def default_contact_tol(model: CostModel, x, target: GridDomain) -> float:
    """4 * target spacing * max |grad_y c(x, .)| over the target grid."""
    return 4.0 * target.spacing * max_gradient_bound(model, x, target)


@dataclass
class ContactSet:
    x: np.ndarray
    members: np.ndarray
    components: list[np.ndarray]
    tol_used: float
    min_gap: float

    @property
    def n_components(self) -> int:
        return len(self.components)

    def as_dict(self) -> dict:
        return {
            "x": self.x.tolist(),
            "members": int(len(self.members)),
            "components": self.n_components,
            "component_sizes": [int(len(c)) for c in self.components],
            "tol": self.tol_used,
            "min_gap": self.min_gap,
        }


def contact_gap(model: CostModel, phi_x: float, phic: GridPotential, x) -> np.ndarray:
    """phi(x) + phi^c(y) + c(x, y) for every target node y (>= 0 when phic is exact)."""
    return phi_x + phic.values + model.eval(np.asarray(x, dtype=float)[None, :], phic.domain.points)


def contact_set(
    model: CostModel,
    phi: GridPotential,
    phic: GridPotential,
    x,
    tol: float | None = None,
) -> ContactSet:
    """Argmax band of y -> -c(x, y) - phi^c(y) at the source node x.

    ``tol`` defaults to ``default_contact_tol``.  Components are connected
    components of the target neighbour graph restricted to members.
    """
    x = np.asarray(x, dtype=float)
    i = phi.domain.index_of(x)
    if i is None:
        raise GridError("x must be a node of the potential's grid")
    if tol is None:
        tol = default_contact_tol(model, x, phic.domain)
    gap = contact_gap(model, phi.values[i], phic, x)
    members = np.flatnonzero(gap <= tol)
    if len(members) == 0:
        raise GridError("empty contact set: tolerance below grid resolution")
    sub = phic.domain.adjacency()[members][:, members]
    _, labels = connected_components(sub, directed=False)
    comps = [members[labels == k] for k in range(labels.max() + 1)]
    comps.sort(key=len, reverse=True)
    return ContactSet(x, members, comps, float(tol), float(gap.min()))


def build_phibar(model: CostModel, x0, y0, y1, domain: GridDomain) -> GridPotential:
    """max of the two supporting functions -c(., y_i) + c(x0, y_i); vanishes at x0."""
    x0 = np.asarray(x0, dtype=float)
    y0 = np.asarray(y0, dtype=float)
    y1 = np.asarray(y1, dtype=float)
    if np.array_equal(y0, y1):
        raise GridError("y0 and y1 must differ")
    f = [_supporting(model, x0, y, domain.points) for y in (y0, y1)]
    return GridPotential(domain, np.maximum(f[0], f[1]))


def _supporting(model, x0, y, pts):
    if not np.all(model.valid(pts, y[None, :])) or not model.valid(x0, y):
        raise GridError("invalid cost pair while building a supporting function")
    return -model.eval(pts, y[None, :]) + float(model.eval(x0, y))


def phibar_at(model: CostModel, x0, y0, y1, pts) -> np.ndarray:
    pts = np.atleast_2d(pts)
    return np.maximum(_supporting(model, x0, y0, pts), _supporting(model, x0, y1, pts))


@dataclass
class AwGeometricReport:
    min_value: float
    argmin_x: list
    argmin_theta: float
    tol: float
    per_theta_min: list
    delta_fit: list = field(default_factory=list)
    delta0_estimate: float | None = None
    r_fit: float | None = None

    @property
    def sign(self) -> int:
        if self.min_value < -self.tol:
            return -1
        return 0 if self.min_value <= self.tol else 1

    def as_dict(self) -> dict:
        return {
            "min": self.min_value,
            "argmin_x": self.argmin_x,
            "argmin_theta": self.argmin_theta,
            "tol": self.tol,
            "sign": self.sign,
            "per_theta_min": self.per_theta_min,
            "delta_fit": self.delta_fit,
            "delta0_estimate": self.delta0_estimate,
            "r_fit": self.r_fit,
        }


def verify_aw_geometric(
    model: CostModel,
    x0,
    y0,
    y1,
    thetas,
    domain: GridDomain,
    fit: bool = True,
    r_fit: float | None = None,
) -> AwGeometricReport:
    """Scan phibar - f_theta over the grid, f_theta = -c(., y_theta) + c(x0, y_theta).

    y_theta runs along the c-segment from y0 to y1 seen from x0.  A negative
    minimum (below ``tol`` = 1e-9 (1 + max|phibar|)) shows the interpolated
    supporting function escaping above phibar.  With ``fit``, the growth of
    phibar - f_theta along the kink hyperplane (p1 - p0) . (x - x0) = 0 is
    fitted as delta r^2 + gamma r^3 for r <= r_fit (default 10 spacings);
    ``delta0_estimate`` is min over theta of delta / (theta (1-theta) |y1-y0|^2).
    """
    x0 = np.asarray(x0, dtype=float)
    y0 = np.asarray(y0, dtype=float)
    y1 = np.asarray(y1, dtype=float)
    thetas = [float(t) for t in thetas]
    if any(t < 0 or t > 1 for t in thetas):
        raise GridError("thetas must lie in [0, 1]")
    pbar = build_phibar(model, x0, y0, y1, domain)
    tol = 1e-9 * (1.0 + float(np.max(np.abs(pbar.values))))
    # a fine segment gives good continuation seeds for arbitrary thetas
    seg = c_segment(model, x0, y0, y1, 65)
    v0, v1 = cotangent(model, x0, y0), cotangent(model, x0, y1)

    def y_theta(t):
        k = int(round(t * 64))
        return c_exponential(model, x0, (1 - t) * v0 + t * v1, seg.points[k]).y

    best = (math.inf, None, None)
    per = []
    ys = {}
    for t in thetas:
        yt = y_theta(t)
        ys[t] = yt
        g = pbar.values - _supporting(model, x0, yt, domain.points)
        j = int(np.argmin(g))
        per.append([t, float(g[j])])
        if g[j] < best[0]:
            best = (float(g[j]), domain.points[j].tolist(), t)
    rep = AwGeometricReport(best[0], best[1], best[2], tol, per)
    if not fit:
        return rep
    r_fit = 10.0 * domain.spacing if r_fit is None else r_fit
    rep.r_fit = r_fit
    dirs = _kink_directions(model, x0, v1 - v0)
    rs = np.linspace(r_fit / 20, r_fit, 20)
    dy2 = float(model.distance(y0, y1)) ** 2
    ratios = []
    for t in thetas:
        if t <= 0.0 or t >= 1.0:
            continue
        for w in dirs:
            for sgn in (1.0, -1.0):
                pts = np.array([model.move(x0, sgn * r * w) for r in rs])
                g = phibar_at(model, x0, y0, y1, pts) - _supporting(model, x0, ys[t], pts)
                coef, *_ = np.linalg.lstsq(np.column_stack([rs**2, rs**3]), g, rcond=None)
                rep.delta_fit.append([t, float(coef[0]), float(coef[1])])
                ratios.append(coef[0] / (t * (1 - t) * dy2))
    rep.delta0_estimate = float(min(ratios)) if ratios else None
    return rep


def _kink_directions(model, x0, dp):
    """Orthonormal tangent directions at x0 orthogonal to dp."""
    B = model.tangent_basis(x0)
    a = B.T @ dp
    a = a / np.linalg.norm(a)
    m = len(a)
    q, _ = np.linalg.qr(np.column_stack([a, np.eye(m)]))
    return [B @ q[:, k] for k in range(1, m)]


# ---------------------------------------------------------------------------
# Exponents and measure growth


def holder_exponent(n: int, p: float) -> tuple[float, float]:
    """alpha = 1 - n/p and beta = alpha / (4n - 2 + alpha); p = inf allowed."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not p > n:
        raise ValueError("need p > n")
    if math.isinf(p):
        alpha = 1.0
    else:
        alpha = 1.0 - n / p
    return alpha, alpha / (4 * n - 2 + alpha)


@dataclass
class GrowthFit:
    slope: float
    constant: float
    radii: list
    masses: list
    n: int | None = None
    p: float | None = None
    satisfies_ball_growth: bool | None = None
    satisfies_weak_growth: bool | None = None
    p_max: float | None = None

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def measure_growth_exponent(
    points,
    weights,
    radii,
    n: int | None = None,
    p: float | None = None,
    max_centers: int = 2000,
    seed: int = 0,
) -> GrowthFit:
    """Least-squares slope of log max_x mu(B_r(x)) against log r.

    Centers are (a seeded subsample of) the support points.  Against
    mu(B_r) <= C r^{n(1 - 1/p)}: ``p_max`` is the largest p the fitted slope
    supports (inf when slope >= n); the ball-growth bound holds for the given p when
    slope >= n(1 - 1/p); the weaker bound o(r^{n-1}) is
    read as slope > n - 1.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    w = np.asarray(weights, dtype=float)
    radii = np.asarray(radii, dtype=float)
    if len(radii) < 3:
        raise ValueError("need at least 3 radii")
    if len(pts) == 0:
        raise ValueError("empty cloud")
    tree = cKDTree(pts)
    rng = np.random.default_rng(seed)
    centers = pts if len(pts) <= max_centers else pts[rng.choice(len(pts), max_centers, replace=False)]
    masses = []
    for r in radii:
        hits = tree.query_ball_point(centers, r)
        masses.append(max(float(w[h].sum()) for h in hits))
    masses = np.array(masses)
    if np.ptp(masses) == 0.0:
        raise ValueError("degenerate fit: ball masses do not vary with r")
    slope, icpt = np.polyfit(np.log(radii), np.log(masses), 1)
    fit = GrowthFit(float(slope), float(math.exp(icpt)), radii.tolist(), masses.tolist(), n, p)
    if n is not None:
        fit.p_max = math.inf if slope >= n else n / (n - slope)
        fit.satisfies_weak_growth = bool(slope > n - 1)
        if p is not None:
            fit.satisfies_ball_growth = bool(slope >= n * (1 - 1 / p))
    return fit


def cantor_points(depth: int) -> np.ndarray:
    """Left endpoints of the 2^depth middle-thirds intervals of generation ``depth``."""
    pts = np.array([0.0])
    for k in range(1, depth + 1):
        pts = np.concatenate([pts, pts + 2.0 / 3.0**k])
    return np.sort(pts)


def cantor_product_measure(depth: int = 8, uniform_nodes: int = 243) -> tuple[np.ndarray, np.ndarray]:
    """Uniform (grid) marginal on [0,1] times the Cantor measure at ``depth``.

    Cantor atoms sit at interval midpoints; all weights are equal.
    """
    c = cantor_points(depth) + 0.5 * 3.0**-depth
    u = (np.arange(uniform_nodes) + 0.5) / uniform_nodes
    P = np.stack(np.meshgrid(u, c, indexing="ij"), axis=-1).reshape(-1, 2)
    return P, np.full(len(P), 1.0 / len(P))
