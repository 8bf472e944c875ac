"""Cost-sectional curvature by finite differences, Aw/As sweeps, sphere identities."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .cexp import NewtonError, c_exponential, cotangent
from .cost_models import SPHERE, CostModel, make_cost
from .domains import PairDomain, child_rng, random_orthonormal_pair

DEFAULT_H = 1e-2
RELIABLE_FRACTION = 0.05
_W = np.array([1.0, -2.0, 1.0])


class StencilError(ValueError):
    """A stencil node left the valid region or its inner solve failed."""


@dataclass
class TangentPair:
    x: np.ndarray
    y: np.ndarray
    xi: np.ndarray
    nu: np.ndarray


def make_tangent_pair(model: CostModel, x, y, xi, nu) -> TangentPair:
    """Orthonormalize (xi, nu) in the tangent space at x (Gram-Schmidt, nu against xi)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xi = model.project(x, np.asarray(xi, dtype=float))
    nu = model.project(x, np.asarray(nu, dtype=float))
    nxi = np.linalg.norm(xi)
    if nxi < 1e-8:
        raise ValueError("xi is (numerically) zero")
    xi = xi / nxi
    nu = nu - (nu @ xi) * xi
    nnu = np.linalg.norm(nu)
    if nnu < 1e-8:
        raise ValueError("nu is parallel to xi")
    return TangentPair(x, y, xi, nu / nnu)


@dataclass
class CurvatureSample:
    pair: TangentPair
    value: float
    h_used: float
    richardson_err: float

    @property
    def reliable(self) -> bool:
        return self.richardson_err <= RELIABLE_FRACTION * max(1.0, abs(self.value))


def _fourth_difference(model, x, y, p0, xi, nu, h, newton_tol):
    ys = []
    for s in (-h, 0.0, h):
        try:
            ys.append(y if s == 0.0 else c_exponential(model, x, p0 + s * nu, y, newton_tol=newton_tol).y)
        except NewtonError as err:
            raise StencilError(f"inner solve failed at s={s:+g}: {err}") from err
    xs = [model.move(x, t * xi) for t in (-h, 0.0, h)]
    f = np.empty((3, 3))
    for i, xt in enumerate(xs):
        for j, ys_ in enumerate(ys):
            if not model.valid(xt, ys_):
                raise StencilError("stencil node outside the valid region")
            f[i, j] = -float(model.eval(xt, ys_))
    return float(_W @ f @ _W) / h**4, float(np.max(np.abs(f)))


def curvature_raw(
    model: CostModel,
    x,
    y,
    xi,
    nu,
    h: float = DEFAULT_H,
    newton_tol: float = 1e-12,
) -> tuple[float, float]:
    """Mixed fourth derivative D^2_{p_nu p_nu} D^2_{x_xi x_xi} of -c(x, T_{x0}(p)).

    Vectors are used as given (no normalization), so the result is
    quadratic in each of xi and nu.  Returns (value, error estimate):
    Richardson over (h, h/2) and a roundoff floor.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    p0 = cotangent(model, x, y)
    xi = model.project(x, np.asarray(xi, dtype=float))
    nu = model.project(x, np.asarray(nu, dtype=float))
    d1, _ = _fourth_difference(model, x, y, p0, xi, nu, h, newton_tol)
    d2, fmax = _fourth_difference(model, x, y, p0, xi, nu, h / 2, newton_tol)
    value = (4.0 * d2 - d1) / 3.0
    scale = (np.linalg.norm(xi) * np.linalg.norm(nu)) ** 2
    roundoff = 64.0 * np.finfo(float).eps * max(fmax, 1.0) / (h / 2) ** 4 * max(scale, 1.0)
    return value, abs(d2 - d1) / 3.0 + roundoff


def cost_sectional_curvature(model: CostModel, pair: TangentPair, h: float = DEFAULT_H) -> CurvatureSample:
    if not model.valid(pair.x, pair.y):
        raise StencilError("(x, y) is not a valid pair")
    value, err = curvature_raw(model, pair.x, pair.y, pair.xi, pair.nu, h)
    return CurvatureSample(pair, value, h, err)


def curvature_from_hessian(model: CostModel, pair: TangentPair, h: float = DEFAULT_H) -> float:
    """The same quantity as D^2_{p_nu p_nu} of <A(x, p) xi, xi>, A = -D^2_xx c(x, T_x(p)).

    Only second differences in p are needed, so this is a cross-check of
    the four-point stencil, not a replacement.
    """
    x, y = pair.x, pair.y
    p0 = cotangent(model, x, y)

    def a(s):
        ys = y if s == 0.0 else c_exponential(model, x, p0 + s * pair.nu, y, newton_tol=1e-12).y
        return -float(pair.xi @ model.hess_xx(x, ys) @ pair.xi)

    def d2(step):
        return (a(step) - 2.0 * a(0.0) + a(-step)) / step**2

    return (4.0 * d2(h / 2) - d2(h)) / 3.0


# ---------------------------------------------------------------------------
# Sweeps


@dataclass
class SweepReport:
    cost: dict
    samples: list[CurvatureSample]
    seed: int
    h: float
    threshold: float
    verdict: str
    min_value: float
    argmin: CurvatureSample | None
    c0_estimate: float
    reliable_count: int
    inconclusive: bool
    failures: int = 0
    notes: list[str] = field(default_factory=list)

    def as_dict(self, include_samples: bool = True) -> dict:
        def pair_dict(s):
            return {
                "x": s.pair.x.tolist(), "y": s.pair.y.tolist(),
                "xi": s.pair.xi.tolist(), "nu": s.pair.nu.tolist(),
                "value": s.value, "err": s.richardson_err, "reliable": s.reliable,
            }

        out = {
            "cost": self.cost,
            "seed": self.seed,
            "h": self.h,
            "threshold": self.threshold,
            "evidence": "sampled",
            "verdict": self.verdict,
            "inconclusive": self.inconclusive,
            "min": self.min_value,
            "argmin": pair_dict(self.argmin) if self.argmin else None,
            "C0_estimate": self.c0_estimate,
            "n_samples": len(self.samples),
            "n_reliable": self.reliable_count,
            "n_failed": self.failures,
        }
        if include_samples:
            out["samples"] = [pair_dict(s) for s in self.samples]
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            n = len(self.samples[0].pair.x) if self.samples else 0
            head = ["index"]
            for key in ("x", "y", "xi", "nu"):
                head += [f"{key}{i}" for i in range(n)]
            w.writerow(head + ["value", "err", "reliable"])
            for k, s in enumerate(self.samples):
                row = [k]
                for v in (s.pair.x, s.pair.y, s.pair.xi, s.pair.nu):
                    row += [repr(float(c)) for c in v]
                w.writerow(row + [repr(s.value), repr(s.richardson_err), int(s.reliable)])


def _eval_task(args):
    descriptor, x, y, xi, nu, h = args
    model = make_cost(descriptor["name"], descriptor["params"], descriptor["dim"])
    try:
        return cost_sectional_curvature(model, TangentPair(x, y, xi, nu), h)
    except (StencilError, NewtonError):
        return None


def classify(samples: list[CurvatureSample], threshold: float = 3.0) -> tuple[str, float, CurvatureSample | None, int]:
    """Verdict from samples: ``violated`` if some reliable value < -threshold*err,
    ``As`` if every reliable value exceeds threshold*err, ``Aw`` otherwise."""
    reliable = [s for s in samples if s.reliable]
    if not reliable:
        return "Aw", 0.0, None, 0
    argmin = min(reliable, key=lambda s: s.value)
    if any(s.value < -threshold * s.richardson_err for s in reliable):
        return "violated", argmin.value, argmin, len(reliable)
    if all(s.value > threshold * s.richardson_err for s in reliable):
        return "As", argmin.value, argmin, len(reliable)
    return "Aw", argmin.value, argmin, len(reliable)


def sweep_condition(
    model: CostModel,
    domain: PairDomain,
    samples: int,
    seed: int,
    h: float = DEFAULT_H,
    threshold: float = 3.0,
    quasi_random: bool = False,
    workers: int = 1,
) -> SweepReport:
    """Sample the cost-sectional curvature over ``domain`` and classify it.

    Pairs and directions are drawn up front from ``seed`` so the report does
    not depend on ``workers``.  Samples whose stencil fails are counted in
    ``failures`` and dropped.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = child_rng(seed, 0)
    pairs = domain.sample(model, samples, rng, quasi_random=quasi_random)
    tasks = []
    for x, y in pairs:
        xi, nu = random_orthonormal_pair(model, x, rng)
        tasks.append((model.descriptor(), x, y, xi, nu, h))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_eval_task, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    else:
        results = [_eval_task(t) for t in tasks]
    done = [r for r in results if r is not None]
    verdict, vmin, argmin, n_rel = classify(done, threshold)
    inconclusive = n_rel < 0.1 * samples
    c0 = vmin if verdict == "As" else (max(vmin, 0.0) if verdict == "Aw" else vmin)
    return SweepReport(
        cost=model.descriptor(), samples=done, seed=seed, h=h, threshold=threshold,
        verdict=verdict, min_value=vmin, argmin=argmin, c0_estimate=c0,
        reliable_count=n_rel, inconclusive=inconclusive, failures=len(results) - len(done),
    )


# ---------------------------------------------------------------------------
# Unit sphere identities


def _sphere_c(a, b):
    return 0.5 * float(geo.geodesic_distance(a, b)) ** 2


def triangle_brackets(x0, xi, nu, h: float) -> np.ndarray:
    """The four brackets c(x_i, y_j) - c(x0, x_i) - c(x0, y_j), i, j in {+, -}.

    x_pm = exp_x0(pm h xi), y_pm = exp_x0(pm h nu), c = d^2/2 on the unit sphere.
    """
    if not 0.0 < h <= 0.3:
        raise ValueError("h must lie in (0, 0.3]")
    x0 = geo.normalize(np.asarray(x0, dtype=float))
    xi = geo.project_tangent(x0, np.asarray(xi, dtype=float))
    nu = geo.project_tangent(x0, np.asarray(nu, dtype=float))
    xs = [geo.sphere_exp(x0, sg * h * xi) for sg in (1.0, -1.0)]
    ys = [geo.sphere_exp(x0, sg * h * nu) for sg in (1.0, -1.0)]
    return np.array([[_sphere_c(a, b) - _sphere_c(x0, a) - _sphere_c(x0, b) for b in ys] for a in xs])


def triangle_quotient(x0, xi, nu, h: float) -> float:
    """Q(h) = -(1/h^4) * (sum of the four triangle brackets)."""
    return -float(np.sum(triangle_brackets(x0, xi, nu, h))) / h**4


@dataclass
class VillaniCheck:
    theta: float
    t_max: float
    corrected: bool
    max_dev: float
    dev_at_tmax: float
    dev_at_half: float
    ts: np.ndarray = field(repr=False, default_factory=lambda: np.empty(0))
    devs: np.ndarray = field(repr=False, default_factory=lambda: np.empty(0))

    @property
    def halving_ratio(self) -> float:
        return self.dev_at_half / self.dev_at_tmax if self.dev_at_tmax else math.nan


def villani_model(theta: float, t, kappa: float = 1.0, corrected: bool = False):
    """Model for d^2 between two unit-speed geodesics at angle theta, time t.

    ``corrected=False`` gives 2(1 - cos theta)(1 - cos^2(theta/2) t^2)^2,
    ``corrected=True`` gives 2(1 - cos theta) t^2 (1 - (kappa/6) cos^2(theta/2) t^2)^2,
    which matches the law of cosines on the unit sphere to O(t^6).
    """
    t = np.asarray(t, dtype=float)
    c2 = math.cos(theta / 2) ** 2
    if corrected:
        return 2 * (1 - math.cos(theta)) * t**2 * (1 - kappa / 6 * c2 * t**2) ** 2
    return 2 * (1 - math.cos(theta)) * (1 - kappa * c2 * t**2) ** 2


def villani_exact(theta: float, t) -> np.ndarray:
    """d^2(gamma_1(t), gamma_2(t)) on the unit sphere, geodesics at angle theta."""
    t = np.asarray(t, dtype=float)
    x0 = np.array([0.0, 0.0, 1.0])
    g1 = geo.sphere_exp(x0, np.multiply.outer(t, np.array([1.0, 0.0, 0.0])))
    g2 = geo.sphere_exp(x0, np.multiply.outer(t, np.array([math.cos(theta), math.sin(theta), 0.0])))
    return geo.geodesic_distance(g1, g2) ** 2


def villani_expansion_check(theta: float, t_max: float, corrected: bool = False, n_t: int = 200) -> VillaniCheck:
    """max over t in (0, t_max] of |d^2_exact - model| / t^4, plus values at t_max and t_max/2."""
    if not 0.0 < theta < math.pi:
        raise ValueError("theta must lie in (0, pi)")
    if not 0.0 < t_max <= 0.3:
        raise ValueError("t_max must lie in (0, 0.3]")
    ts = np.linspace(t_max / n_t, t_max, n_t)
    devs = np.abs(villani_exact(theta, ts) - villani_model(theta, ts, corrected=corrected)) / ts**4

    def dev(t):
        return float(abs(villani_exact(theta, t) - villani_model(theta, t, corrected=corrected)) / t**4)

    return VillaniCheck(theta, t_max, corrected, float(devs.max()), dev(t_max), dev(t_max / 2), ts, devs)


def sphere_G(r, c):
    """G(r) = (1 - r cot r)(1 - c^2/r^2)."""
    return (1.0 - r * np.cos(r) / np.sin(r)) * (1.0 - c**2 / r**2)


def sphere_d2F(alpha, beta, c, t):
    """Closed form of d^2/dt^2 G(r(t)), r(t) = sqrt(alpha^2 + t^2 beta^2), alpha perp beta."""
    r = np.sqrt(alpha**2 + (t * beta) ** 2)
    s, co = np.sin(r), np.cos(r)
    k = c**2 / r**2
    first = alpha**2 * beta**2 / r**3 * ((r - s * co) / s**2 * (1 - k) + (s - r * co) / s * 2 * c**2 / r**3)
    second = t**2 * beta**4 / r**2 * (
        2 / s**3 * (s - r * co) * (1 - k)
        + 2 / s**2 * (r - s * co) * 2 * c**2 / r**3
        - (s - r * co) / s * 6 * c**2 / r**4
    )
    return first + second


def sphere_d2F_fd(alpha, beta, c, t, h: float = 1e-4):
    def F(tt):
        return sphere_G(np.sqrt(alpha**2 + (tt * beta) ** 2), c)

    return (F(t + h) - 2 * F(t) + F(t - h)) / h**2


def d2F_lower_constant(n_grid: int = 12, r_max: float = math.pi - 0.05) -> dict:
    """min of d^2F/dt^2 / beta^2 over a grid with r < r_max and |c| <= min(alpha, r)."""
    best = math.inf
    arg = None
    for alpha in np.linspace(0.05, r_max, n_grid):
        for beta in np.linspace(0.05, 2.0, n_grid):
            t_lim = math.sqrt(max(r_max**2 - alpha**2, 0.0)) / beta
            for t in np.linspace(-t_lim, t_lim, n_grid):
                for c in np.linspace(-alpha, alpha, n_grid):
                    val = float(sphere_d2F(alpha, beta, c, t)) / beta**2
                    if val < best:
                        best, arg = val, (alpha, beta, c, t)
    return {"min_ratio": best, "argmin": arg}


def auxiliary_minima(points: int = 10_000) -> dict:
    """Dense minima on (0, pi] of (sin r - r cos r)/r^3, (r - sin r cos r)/r^3 and of
    (r sin 2r + 3 cos 2r + 4 r^2 - 3)/2, with the r -> 0 limits included."""
    r = np.linspace(math.pi / points, math.pi, points)
    f1 = (np.sin(r) - r * np.cos(r)) / r**3
    f2 = (r - np.sin(r) * np.cos(r)) / r**3
    f3 = 0.5 * (r * np.sin(2 * r) + 3 * np.cos(2 * r) + 4 * r**2 - 3)
    return {
        "sin_minus_rcos": float(min(f1.min(), 1.0 / 3.0)),
        "r_minus_sincos": float(min(f2.min(), 2.0 / 3.0)),
        "last_two_lines": float(f3.min()),
    }
