"""Green's functions of simple random walk killed on leaving a finite domain.

Two normalisations are used throughout:

* walk:      G_walk = (I - P_A)^{-1}, expected number of visits (the random-walk object);
* laplacian: G_lap  = (2d I - adjacency)^{-1} = G_walk / (2d).

Everything is computed from the symmetric Dirichlet Laplacian 2d I - adjacency.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import gamma, pi

import numpy as np

from .lattice import BoxRegion, Domain, ball, centered_box
from .linalg import SPDSolver

RESIDUAL_TOL = 1e-10


def unit_ball_volume(d: int) -> float:
    return pi ** (d / 2) / gamma(d / 2 + 1)


def far_field_constant(d: int) -> float:
    """a_d = 2 / ((d - 2) w_d) for d >= 3."""
    if d < 3:
        raise ValueError("far-field constant defined for d >= 3")
    return 2.0 / ((d - 2) * unit_ball_volume(d))


class GreenOperator:
    """Factorised Dirichlet Laplacian of a domain, reused across many solves."""

    def __init__(self, region: Domain, method: str | None = None):
        self.region = region
        self.d = region.d
        self.L = region.laplacian().tocsr()
        self._solver = SPDSolver(self.L, method)
        self.method = self._solver.method

    def solve_lap(self, rhs) -> np.ndarray:
        """G_lap @ rhs."""
        return self._solver.solve(rhs)

    def solve_walk(self, rhs) -> np.ndarray:
        """G_walk @ rhs, i.e. the solution g of (I - P) g = rhs."""
        return 2 * self.d * self._solver.solve(rhs)

    def walk_residual(self, g, rhs) -> float:
        """|| (I - P) g - rhs ||_inf."""
        return float(np.max(np.abs(self.L @ g / (2 * self.d) - rhs)))


@lru_cache(maxsize=32)
def _cached_operator(key, method):
    kind, args = key
    region = BoxRegion(*args) if kind == "box" else ball(*args)
    return GreenOperator(region, method)


def operator_for(region: Domain, method: str | None = None) -> GreenOperator:
    if isinstance(region, BoxRegion):
        key = ("box", (tuple(region.a.tolist()), tuple(region.l.tolist())))
        return _cached_operator(key, method)
    return GreenOperator(region, method)


@dataclass(frozen=True)
class GreenColumn:
    region: Domain
    source: tuple
    values: np.ndarray
    normalization: str = "walk"

    def at(self, y) -> float:
        i = self.region.index(y)[0]
        if i < 0:
            return 0.0
        return float(self.values[i])

    def to(self, normalization: str) -> "GreenColumn":
        if normalization == self.normalization:
            return self
        factor = 2 * self.region.d
        vals = self.values / factor if normalization == "laplacian" else self.values * factor
        return GreenColumn(self.region, self.source, vals, normalization)


def _source_index(region: Domain, x) -> int:
    i = int(region.index(x)[0])
    if i < 0:
        raise ValueError(f"source {list(np.ravel(x))} not in the domain")
    return i


def green_column(
    region: Domain, x, method: str | None = None, normalization: str = "walk", op: GreenOperator | None = None
) -> GreenColumn:
    """G(x, .) on the domain, by one Dirichlet solve."""
    op = op or operator_for(region, method)
    i = _source_index(region, x)
    e = np.zeros(region.n)
    e[i] = 1.0
    g = op.solve_walk(e)
    res = op.walk_residual(g, e)
    if res > RESIDUAL_TOL:
        from .linalg import SolverFailure

        raise SolverFailure(f"green column residual {res:.2e} above {RESIDUAL_TOL}")
    col = GreenColumn(region, tuple(int(t) for t in np.ravel(x)), g, "walk")
    return col.to(normalization)


def exit_times(region: Domain, method: str | None = None, op: GreenOperator | None = None) -> np.ndarray:
    """E_x(tau) for every x in the domain: the solution h of (I - P) h = 1."""
    op = op or operator_for(region, method)
    return op.solve_walk(np.ones(region.n))


def exit_time(region: Domain, x, method: str | None = None) -> float:
    return float(exit_times(region, method)[_source_index(region, x)])


def quad_form(region: Domain, xi_values, method: str | None = None, normalization: str = "walk") -> float:
    """<xi, G xi> = xi^T g with (I - P) g = xi (a single solve)."""
    xi = np.asarray(xi_values, dtype=float)
    if xi.shape != (region.n,):
        raise ValueError(f"xi must have one value per site ({region.n})")
    if not np.any(xi):
        return 0.0
    op = operator_for(region, method)
    g = op.solve_walk(xi) if normalization == "walk" else op.solve_lap(xi)
    return float(xi @ g)


def sum_all_green(N: int, d: int, method: str | None = None) -> float:
    """Sum over x, y in Lambda_N of G_walk(x, y) = sum of exit times."""
    if N < 1 or d < 1:
        raise ValueError("need N >= 1 and d >= 1")
    return float(exit_times(centered_box(N, d), method).sum())


def green_sum_bounds(N: int, d: int) -> tuple[float, float]:
    """Lower and upper bounds on sum_{x,y in Lambda_N} G(x, y) valid for large N."""
    w = unit_ball_volume(d)
    lower = (d + 1) / (d + 2) * w * N**2 * (N - 1) ** d
    upper = (N * np.sqrt(d)) ** d * d * w * ((N + 1) ** 2 - N**2 / (d + 2))
    return lower, upper


def exit_time_sandwich(N: int, d: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(lower, exact, upper) exit times on the ball B_N, per site."""
    B = ball(N, d)
    r2 = (B.sites.astype(float) ** 2).sum(axis=1)
    return N**2 - r2, exit_times(B), (N + 1) ** 2 - r2


def green_trace(region: Domain, normalization: str = "walk") -> float:
    """sum_x G(x, x).

    Boxes use the separable Dirichlet spectrum, sum_k 1 / sum_i (2 - 2 cos(pi k_i / (n_i + 1)));
    other domains fall back to a dense inverse.
    """
    if isinstance(region, BoxRegion):
        grids = np.meshgrid(
            *[2 - 2 * np.cos(np.pi * np.arange(1, s + 1) / (s + 1)) for s in region.shape], indexing="ij"
        )
        tr = float(np.sum(1.0 / sum(grids)))
    else:
        tr = float(np.trace(np.linalg.inv(region.laplacian().toarray())))
    return 2 * region.d * tr if normalization == "walk" else tr
