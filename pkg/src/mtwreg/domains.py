"""Sampling domains for (x, y) pairs and seed splitting."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

from . import geometry as geo
from .cost_models import SPHERE, CostModel


def child_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent stream for (seed, keys); the same keys always give the same stream."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


@dataclass
class PairDomain:
    """A product set Omega x Omega' with optional separation constraints.

    ``kind="box"``: x in [x_lo, x_hi]^n, y in [y_lo, y_hi]^n (scalars or
    per-axis arrays).  ``kind="sphere_cap"``: x in the geodesic cap
    B(x_center, x_radius), y in B(y_center, y_radius).  Separation
    ``min_dist <= d(x, y) <= max_dist`` uses the chart's distance.
    """

    kind: str = "box"
    dim: int = 2
    x_lo: float | np.ndarray = 0.0
    x_hi: float | np.ndarray = 1.0
    y_lo: float | np.ndarray = 0.0
    y_hi: float | np.ndarray = 1.0
    x_center: np.ndarray | None = None
    x_radius: float = math.pi
    y_center: np.ndarray | None = None
    y_radius: float = math.pi
    min_dist: float = 0.0
    max_dist: float = math.inf

    def __post_init__(self):
        if self.kind not in ("box", "sphere_cap"):
            raise ValueError(f"unknown domain kind {self.kind!r}")
        if self.kind == "sphere_cap":
            e = np.zeros(self.dim)
            e[-1] = 1.0
            self.x_center = geo.normalize(e if self.x_center is None else self.x_center)
            self.y_center = geo.normalize(e if self.y_center is None else self.y_center)

    def mirrored(self) -> "PairDomain":
        """Same domain with the roles of x and y swapped."""
        return PairDomain(
            self.kind, self.dim, self.y_lo, self.y_hi, self.x_lo, self.x_hi,
            self.y_center, self.y_radius, self.x_center, self.x_radius,
            self.min_dist, self.max_dist,
        )

    def contains(self, model: CostModel, x: np.ndarray, y: np.ndarray) -> bool:
        if self.kind == "box":
            if np.any(x < self.x_lo) or np.any(x > self.x_hi) or np.any(y < self.y_lo) or np.any(y > self.y_hi):
                return False
        else:
            if geo.geodesic_distance(self.x_center, x) > self.x_radius:
                return False
            if geo.geodesic_distance(self.y_center, y) > self.y_radius:
                return False
        d = float(model.distance(x, y))
        return self.min_dist <= d <= self.max_dist and bool(model.valid(x, y))

    def _draw(self, u: np.ndarray, rng: np.random.Generator):
        n = self.dim
        if self.kind == "box":
            x = self.x_lo + (np.asarray(self.x_hi) - self.x_lo) * u[:n]
            y = self.y_lo + (np.asarray(self.y_hi) - self.y_lo) * u[n:]
            return x, y
        x = geo.random_cap_point(rng, self.x_center, self.x_radius)
        y = geo.random_cap_point(rng, self.y_center, self.y_radius)
        return x, y

    def sample(
        self,
        model: CostModel,
        count: int,
        rng: np.random.Generator,
        quasi_random: bool = False,
        max_attempts: int = 1000,
    ) -> list[tuple[np.ndarray, np.ndarray]]:
        """Rejection-sample ``count`` admissible pairs.

        With ``quasi_random`` the box coordinates come from a scrambled
        Halton sequence seeded by ``rng``.
        """
        if (model.chart == SPHERE) != (self.kind == "sphere_cap"):
            raise ValueError("domain kind does not match the cost chart")
        halton = None
        if quasi_random and self.kind == "box":
            halton = qmc.Halton(2 * self.dim, scramble=True, seed=rng)
        out = []
        attempts = 0
        while len(out) < count:
            attempts += 1
            if attempts > max_attempts * max(count, 1):
                raise RuntimeError("domain has too few admissible pairs")
            u = halton.random(1)[0] if halton is not None else rng.random(2 * self.dim)
            x, y = self._draw(u, rng)
            if self.contains(model, x, y):
                out.append((x, y))
        return out


def random_orthonormal_pair(model: CostModel, x: np.ndarray, rng: np.random.Generator):
    """Uniformly random orthonormal (xi, nu) in the tangent space at x."""
    B = model.tangent_basis(x)
    m = B.shape[1]
    if m < 2:
        raise ValueError("orthogonal direction pairs need tangent dimension >= 2")
    q, _ = np.linalg.qr(rng.standard_normal((m, 2)))
    return B @ q[:, 0], B @ q[:, 1]
