"""Cost functions c(x, y) with analytic derivatives and finite-difference audits.

Euclidean costs in the library are radial, c(x, y) = g(|x - y|^2), so their
derivatives follow from g, g', g''.  The sphere cost is half the squared
great-circle distance on embedded unit vectors; its derivatives are
Riemannian (tangent-plane) objects written as ambient matrices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import geometry as geo

EUCLIDEAN = "euclidean"
SPHERE = "sphere_embedded"

COST_NAMES = (
    "quadratic",
    "sqrt_plus",
    "sqrt_minus",
    "power_ratio",
    "power_p",
    "neg_log",
    "sphere_sq_dist",
)

# Finite-difference step factors, multiplied by (1 + |x|).
FD_STEP_FIRST = 1e-5
FD_STEP_SECOND = 1e-4


class CostError(ValueError):
    """Unknown cost name or inconsistent parameters."""


class CostModel:
    """Base class: a cost on a chart, its derivatives and validity domain.

    ``grad_x``/``grad_y`` and the Hessians act on single points (1-D arrays).
    ``eval`` broadcasts over leading axes, which the grid transforms rely on.
    """

    chart = EUCLIDEAN
    symmetric = True

    def __init__(self, name: str, params: Mapping[str, float], dim: int):
        self.name = name
        self.params = dict(params)
        self.dim = int(dim)
        self.metadata = {"derivatives": "analytic"}

    def __repr__(self) -> str:
        return f"{type(self).__name__}(name={self.name!r}, params={self.params}, dim={self.dim})"

    def __call__(self, x, y):
        return self.eval(x, y)

    def __reduce__(self):
        return (make_cost, (self.name, self.params, self.dim))

    def descriptor(self) -> dict:
        return {"name": self.name, "params": dict(sorted(self.params.items())), "dim": self.dim}

    # chart operations -------------------------------------------------
    def tangent_basis(self, x: np.ndarray) -> np.ndarray:
        return np.eye(self.dim)

    def move(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Follow the chart's straight line (Euclidean) or geodesic (sphere)."""
        return np.asarray(x, dtype=float) + v

    def project(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        return np.asarray(v, dtype=float)

    def distance(self, x, y):
        return np.linalg.norm(np.asarray(x, dtype=float) - np.asarray(y, dtype=float), axis=-1)

    def check_point(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"point must have shape ({self.dim},), got {x.shape}")
        return x

    # to be provided by subclasses --------------------------------------
    def eval(self, x, y):
        raise NotImplementedError

    def grad_x(self, x, y) -> np.ndarray:
        raise NotImplementedError

    def grad_y(self, x, y) -> np.ndarray:
        raise NotImplementedError

    def hess_xx(self, x, y) -> np.ndarray:
        raise NotImplementedError

    def hess_xy(self, x, y) -> np.ndarray:
        raise NotImplementedError

    def valid(self, x, y):
        raise NotImplementedError

    def mixed_det(self, x, y) -> float:
        """det of D^2_xy c in orthonormal tangent frames at x and y."""
        H = self.hess_xy(x, y)
        return float(np.linalg.det(self.tangent_basis(x).T @ H @ self.tangent_basis(y)))


class RadialCost(CostModel):
    """c(x, y) = g(q) with q = |x - y|^2 on R^n."""

    def __init__(self, name, params, dim, g, g1, g2, q_min=0.0, q_max=math.inf):
        super().__init__(name, params, dim)
        self._g, self._g1, self._g2 = g, g1, g2
        self.q_min = q_min
        self.q_max = q_max

    def eval(self, x, y):
        d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
        return self._g(np.sum(d * d, axis=-1))

    def grad_x(self, x, y):
        d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
        return 2.0 * self._g1(d @ d) * d

    def grad_y(self, x, y):
        return -self.grad_x(x, y)

    def hess_xx(self, x, y):
        d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
        q = d @ d
        return 2.0 * self._g1(q) * np.eye(self.dim) + 4.0 * self._g2(q) * np.outer(d, d)

    def hess_xy(self, x, y):
        return -self.hess_xx(x, y)

    def valid(self, x, y):
        d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
        q = np.sum(d * d, axis=-1)
        ok = (q >= self.q_min) & (q < self.q_max)
        return bool(ok) if np.ndim(ok) == 0 else ok


class SphereSqDist(CostModel):
    """c(x, y) = d(x, y)^2 / 2 on the unit sphere S^{dim-1} in R^dim."""

    chart = SPHERE

    def __init__(self, params, dim):
        super().__init__("sphere_sq_dist", params, dim)
        self.cut_margin = float(self.params.get("cut_margin", 1e-2))

    def tangent_basis(self, x):
        return geo.tangent_basis(np.asarray(x, dtype=float))

    def move(self, x, v):
        return geo.sphere_exp(x, geo.project_tangent(np.asarray(x, dtype=float), v))

    def project(self, x, v):
        return geo.project_tangent(np.asarray(x, dtype=float), np.asarray(v, dtype=float))

    def distance(self, x, y):
        return geo.geodesic_distance(x, y)

    def check_point(self, x):
        x = super().check_point(x)
        if abs(np.linalg.norm(x) - 1.0) > 1e-12:
            raise ValueError("sphere points must have unit norm")
        return x

    def eval(self, x, y):
        return 0.5 * geo.geodesic_distance(x, y) ** 2

    def grad_x(self, x, y):
        return -geo.sphere_log(x, y)

    def grad_y(self, x, y):
        return -geo.sphere_log(y, x)

    def _frame(self, x, y):
        v = geo.sphere_log(x, y)
        theta = float(np.linalg.norm(v))
        if theta > 1e-12:
            u = v / theta
        else:
            u = geo.tangent_basis(x)[:, 0]
        return theta, u

    def hess_xx(self, x, y):
        x = np.asarray(x, dtype=float)
        theta, u = self._frame(x, y)
        P = np.eye(self.dim) - np.outer(x, x)
        uu = np.outer(u, u)
        return uu + _r_cot_r(theta) * (P - uu)

    def hess_xy(self, x, y):
        # D_y log_x(y) inverts d(exp_x): the radial direction at y maps to u,
        # directions normal to span(x, y) are stretched by theta / sin(theta).
        x = np.asarray(x, dtype=float)
        theta, u = self._frame(x, y)
        tau = -math.sin(theta) * x + math.cos(theta) * u
        Q = np.eye(self.dim) - np.outer(x, x) - np.outer(u, u)
        stretch = theta / math.sin(theta) if theta > 1e-8 else 1.0 + theta**2 / 6.0
        return -(np.outer(u, tau) + stretch * Q)

    def valid(self, x, y):
        ok = geo.geodesic_distance(x, y) <= math.pi - self.cut_margin
        return bool(ok) if np.ndim(ok) == 0 else ok


def _r_cot_r(r: float) -> float:
    if abs(r) < 1e-6:
        return 1.0 - r * r / 3.0
    return r * math.cos(r) / math.sin(r)


def make_cost(name: str, params: Mapping[str, float] | None = None, dim: int = 2) -> CostModel:
    """Build a cost model by name.

    Parameters
    ----------
    name : str
        One of ``COST_NAMES``.
    params : mapping, optional
        ``power_ratio``/``power_p`` need ``p``; ``power_p`` also takes
        ``sign`` (+1 or -1, default +1).  Singular costs accept ``min_sep``
        (default 1e-3), the sphere accepts ``cut_margin`` (default 1e-2),
        ``sqrt_minus`` accepts ``margin`` (default 1e-3).
    dim : int
        Ambient dimension (for the sphere, S^{dim-1} sits in R^dim).
    """
    params = dict(params or {})
    dim = int(dim)
    if dim < 1:
        raise CostError("dim must be >= 1")
    if name == "quadratic":
        return RadialCost(name, params, dim, lambda q: 0.5 * q, lambda q: 0.5 + 0.0 * q, lambda q: 0.0 * q)
    if name == "sqrt_plus":
        return RadialCost(
            name, params, dim,
            lambda q: np.sqrt(1.0 + q),
            lambda q: 0.5 / np.sqrt(1.0 + q),
            lambda q: -0.25 * (1.0 + q) ** -1.5,
        )
    if name == "sqrt_minus":
        margin = float(params.get("margin", 1e-3))
        return RadialCost(
            name, params, dim,
            lambda q: -np.sqrt(1.0 - q),
            lambda q: 0.5 / np.sqrt(1.0 - q),
            lambda q: 0.25 * (1.0 - q) ** -1.5,
            q_max=(1.0 - margin) ** 2,
        )
    if name == "power_ratio":
        p = _require_p(params)
        q_max = 1.0 / (p - 1.0) if p > 1.0 else math.inf
        return RadialCost(
            name, params, dim,
            lambda q: (1.0 + q) ** (p / 2),
            lambda q: (p / 2) * (1.0 + q) ** (p / 2 - 1),
            lambda q: (p / 2) * (p / 2 - 1) * (1.0 + q) ** (p / 2 - 2),
            q_max=q_max,
        )
    if name == "power_p":
        p = _require_p(params)
        if p == 1.0:
            raise CostError("power_p with p = 1 has singular D^2_xy c everywhere")
        sign = float(params.get("sign", 1.0))
        if sign not in (1.0, -1.0):
            raise CostError("power_p sign must be +1 or -1")
        params.setdefault("sign", sign)
        min_sep = float(params.get("min_sep", 1e-3))
        return RadialCost(
            name, params, dim,
            lambda q: sign / p * q ** (p / 2),
            lambda q: sign * 0.5 * q ** (p / 2 - 1),
            lambda q: sign * 0.5 * (p / 2 - 1) * q ** (p / 2 - 2),
            q_min=min_sep**2,
        )
    if name == "neg_log":
        min_sep = float(params.get("min_sep", 1e-3))
        return RadialCost(
            name, params, dim,
            lambda q: -0.5 * np.log(q),
            lambda q: -0.5 / q,
            lambda q: 0.5 / q**2,
            q_min=min_sep**2,
        )
    if name == "sphere_sq_dist":
        if dim < 2:
            raise CostError("sphere_sq_dist needs dim >= 2")
        return SphereSqDist(params, dim)
    raise CostError(f"unknown cost {name!r}; expected one of {', '.join(COST_NAMES)}")


def _require_p(params) -> float:
    if "p" not in params:
        raise CostError("parameter p is required")
    p = float(params["p"])
    if p == 0.0 or not math.isfinite(p):
        raise CostError("p must be finite and non-zero")
    return p


def cost_from_config(section: Mapping[str, str]) -> CostModel:
    """Build a cost from flat keys ``name``, ``dim``, ``params.<key>``."""
    if "name" not in section:
        raise CostError("cost.name missing")
    params = {k.split(".", 1)[1]: float(v) for k, v in section.items() if k.startswith("params.")}
    return make_cost(section["name"], params, int(section.get("dim", 2)))


# ---------------------------------------------------------------------------
# Sphere: Hessian of the cost in geodesic normal coordinates


def hess_xx_sphere_normal(r: float, n: int) -> np.ndarray:
    """D^2_xx c(x, exp_x(p)) in normal coordinates with e_1 = p/|p|, |p| = r.

    Returns the (n-1) x (n-1) matrix diag(1, r cot r, ..., r cot r).
    """
    if not 0.0 < r < math.pi:
        raise ValueError("r must lie in (0, pi)")
    if n < 2:
        raise ValueError("n must be >= 2")
    d = np.full(n - 1, _r_cot_r(r))
    d[0] = 1.0
    return np.diag(d)


def normal_hessian_fd(r: float, n: int, h: float = 1e-3) -> np.ndarray:
    """Finite-difference Hessian of x -> d^2(x, y)/2 in normal coordinates.

    Base point is e_n, target y = exp(r e_1).  Nested central differences of
    the embedded cost with Richardson extrapolation over (h, h/2).
    """
    model = make_cost("sphere_sq_dist", {"cut_margin": 0.0}, n)
    x0 = np.zeros(n)
    x0[-1] = 1.0
    B = np.eye(n)[:, : n - 1]
    y = geo.sphere_exp(x0, r * B[:, 0])

    def f(v):
        return float(model.eval(geo.sphere_exp(x0, B @ v), y))

    def hess(step):
        m = n - 1
        H = np.empty((m, m))
        E = np.eye(m) * step
        f0 = f(np.zeros(m))
        for i in range(m):
            H[i, i] = (f(E[i]) - 2.0 * f0 + f(-E[i])) / step**2
            for j in range(i):
                H[i, j] = H[j, i] = (
                    f(E[i] + E[j]) - f(E[i] - E[j]) - f(-E[i] + E[j]) + f(-E[i] - E[j])
                ) / (4.0 * step**2)
        return H

    return (4.0 * hess(h / 2) - hess(h)) / 3.0


# ---------------------------------------------------------------------------
# Finite-difference audit


@dataclass
class FDReport:
    cost: dict
    samples: int
    seed: int
    max_error: dict = field(default_factory=dict)
    worst_pair: dict = field(default_factory=dict)

    def passed(self, tol: float) -> bool:
        return all(v < tol for v in self.max_error.values())


def _richardson(D):
    # (step, 2 step) rather than (step/2, step): step stays the finest spacing
    def wrapped(step):
        return (4.0 * D(step) - D(2.0 * step)) / 3.0

    return wrapped


def fd_derivatives(model: CostModel, x: np.ndarray, y: np.ndarray) -> dict:
    """Central-difference estimates of the four derivative blocks.

    Components are taken in the orthonormal tangent frames returned by
    ``model.tangent_basis``; Richardson over (h, 2h) is applied.
    """
    Bx, By = model.tangent_basis(x), model.tangent_basis(y)
    mx, my = Bx.shape[1], By.shape[1]
    h1x = FD_STEP_FIRST * (1.0 + np.linalg.norm(x))
    h1y = FD_STEP_FIRST * (1.0 + np.linalg.norm(y))
    h2x = FD_STEP_SECOND * (1.0 + np.linalg.norm(x))

    def c_at(v, w):
        return float(model.eval(model.move(x, Bx @ v), model.move(y, By @ w)))

    zx, zy = np.zeros(mx), np.zeros(my)

    def gx(step):
        return np.array([(c_at(step * e, zy) - c_at(-step * e, zy)) / (2 * step) for e in np.eye(mx)])

    def gy(step):
        return np.array([(c_at(zx, step * e) - c_at(zx, -step * e)) / (2 * step) for e in np.eye(my)])

    def hxx(step):
        E = np.eye(mx) * step
        f0 = c_at(zx, zy)
        H = np.empty((mx, mx))
        for i in range(mx):
            H[i, i] = (c_at(E[i], zy) - 2 * f0 + c_at(-E[i], zy)) / step**2
            for j in range(i):
                H[i, j] = H[j, i] = (
                    c_at(E[i] + E[j], zy) - c_at(E[i] - E[j], zy)
                    - c_at(-E[i] + E[j], zy) + c_at(-E[i] - E[j], zy)
                ) / (4 * step**2)
        return H

    def hxy(step):
        cols = []
        for e in np.eye(my):
            gp = model.grad_x(x, model.move(y, step * (By @ e)))
            gm = model.grad_x(x, model.move(y, -step * (By @ e)))
            cols.append(Bx.T @ (gp - gm) / (2 * step))
        return np.column_stack(cols)

    return {
        "grad_x": _richardson(gx)(h1x),
        "grad_y": _richardson(gy)(h1y),
        "hess_xx": _richardson(hxx)(h2x),
        "hess_xy": _richardson(hxy)(h1y),
    }


def analytic_derivatives(model: CostModel, x: np.ndarray, y: np.ndarray) -> dict:
    Bx, By = model.tangent_basis(x), model.tangent_basis(y)
    return {
        "grad_x": Bx.T @ model.grad_x(x, y),
        "grad_y": By.T @ model.grad_y(x, y),
        "hess_xx": Bx.T @ model.hess_xx(x, y) @ Bx,
        "hess_xy": Bx.T @ model.hess_xy(x, y) @ By,
    }


def sample_valid_pair(
    model: CostModel,
    rng: np.random.Generator,
    box: tuple[float, float] = (0.0, 1.0),
    accept: Callable[[np.ndarray, np.ndarray], bool] | None = None,
    max_attempts: int = 10_000,
) -> tuple[np.ndarray, np.ndarray]:
    """Rejection-sample a valid (x, y): box for Euclidean, sphere otherwise."""
    for _ in range(max_attempts):
        if model.chart == SPHERE:
            x, y = geo.random_sphere_points(rng, 2, model.dim)
        else:
            x, y = rng.uniform(box[0], box[1], size=(2, model.dim))
        if model.valid(x, y) and (accept is None or accept(x, y)):
            return x, y
    raise RuntimeError(f"no valid pair for {model.name} after {max_attempts} attempts")


def fd_consistency_report(
    model: CostModel,
    samples: int,
    seed: int,
    box: tuple[float, float] = (0.0, 1.0),
    accept: Callable[[np.ndarray, np.ndarray], bool] | None = None,
) -> FDReport:
    """Max of |analytic - FD| / (1 + |analytic|) per derivative block.

    ``accept`` narrows the sampled pairs further (e.g. an exclusion zone).
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    report = FDReport(cost=model.descriptor(), samples=samples, seed=seed)
    for _ in range(samples):
        x, y = sample_valid_pair(model, rng, box, accept)
        exact = analytic_derivatives(model, x, y)
        approx = fd_derivatives(model, x, y)
        for key, a in exact.items():
            err = float(np.max(np.abs(a - approx[key]) / (1.0 + np.abs(a))))
            if err >= report.max_error.get(key, -1.0):
                report.max_error[key] = err
                report.worst_pair[key] = (x.tolist(), y.tolist())
    return report
