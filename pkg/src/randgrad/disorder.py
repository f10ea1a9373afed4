"""Counter-based quenched disorder.

Every disorder value is a pure function of (master seed, lattice location), obtained by
hashing with splitmix64 and pushing the resulting uniform through an inverse CDF.  The
field is therefore defined on all of Z^d, so shifted disorder and nested volumes see
exactly the same numbers.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.special import ndtri

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_SCALE52 = float(2.0**-52)

# stream tags keep site fields, conductances and perturbations statistically unrelated
_TAG_SITE = 0x51
_TAG_COND = 0xC0
_TAG_PERT = 0xE7


def splitmix64(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.uint64) + _GOLDEN
    x = (x ^ (x >> np.uint64(30))) * _M1
    x = (x ^ (x >> np.uint64(27))) * _M2
    return x ^ (x >> np.uint64(31))


def hash_sites(seed: int, tag: int, sites: np.ndarray, extra: np.ndarray | None = None) -> np.ndarray:
    """64-bit hash of (seed, tag, coordinates[, extra]) for each row of ``sites``."""
    sites = np.atleast_2d(np.asarray(sites, dtype=np.int64))
    h = splitmix64(np.full(len(sites), (seed ^ (tag << 56)) & 0xFFFFFFFFFFFFFFFF, dtype=np.uint64))
    for k in range(sites.shape[1]):
        h = splitmix64(h ^ sites[:, k].astype(np.uint64))
    if extra is not None:
        h = splitmix64(h ^ np.asarray(extra, dtype=np.int64).astype(np.uint64))
    return h


def to_open_unit(h: np.ndarray) -> np.ndarray:
    """Map 64-bit words to uniforms strictly inside (0, 1).

    52 bits keep the midpoint offset exact: the largest value is 1 - 2^-53 < 1.
    """
    return ((h >> np.uint64(12)).astype(np.float64) + 0.5) * _SCALE52


@dataclass(frozen=True)
class SiteDisorderSpec:
    """i.i.d. site field xi for model A.

    distribution: ``gaussian`` (mean, var), ``rademacher_shifted`` (mean; values mean +- 1),
    or ``uniform`` (lo, hi).  ``shift`` realises tau_v: the shifted field at s is the
    unshifted field at s - v.
    """

    distribution: str = "gaussian"
    seed: int = 0
    mean: float = 0.0
    var: float = 1.0
    lo: float = 0.0
    hi: float = 1.0
    shift: tuple = field(default=())

    def __post_init__(self):
        if self.distribution not in ("gaussian", "rademacher_shifted", "uniform"):
            raise ValueError(f"unknown site distribution {self.distribution!r}")
        if self.distribution == "gaussian" and self.var <= 0:
            raise ValueError("gaussian variance must be positive")
        if self.distribution == "uniform" and not self.lo < self.hi:
            raise ValueError("uniform needs lo < hi")

    @property
    def expectation(self) -> float:
        if self.distribution == "uniform":
            return 0.5 * (self.lo + self.hi)
        return self.mean

    @property
    def variance(self) -> float:
        if self.distribution == "gaussian":
            return self.var
        if self.distribution == "rademacher_shifted":
            return 1.0
        return (self.hi - self.lo) ** 2 / 12.0

    @property
    def second_moment(self) -> float:
        return self.variance + self.expectation**2

    def shifted(self, v: Sequence[int]) -> "SiteDisorderSpec":
        v = np.asarray(v, dtype=np.int64)
        cur = np.asarray(self.shift, dtype=np.int64) if self.shift else np.zeros_like(v)
        return replace(self, shift=tuple(int(t) for t in cur + v))

    def with_seed(self, seed: int) -> "SiteDisorderSpec":
        return replace(self, seed=int(seed))

    def cdf(self, x):
        from scipy import stats

        if self.distribution == "gaussian":
            return stats.norm.cdf(x, loc=self.mean, scale=np.sqrt(self.var))
        if self.distribution == "uniform":
            return stats.uniform.cdf(x, loc=self.lo, scale=self.hi - self.lo)
        x = np.asarray(x, dtype=float)
        return np.where(x < self.mean - 1, 0.0, np.where(x < self.mean + 1, 0.5, 1.0))


def xi_at(spec: SiteDisorderSpec, sites) -> np.ndarray:
    """Disorder values at one site (shape (d,)) or many sites (shape (m, d))."""
    sites = np.asarray(sites, dtype=np.int64)
    scalar = sites.ndim == 1
    sites = np.atleast_2d(sites)
    if spec.shift:
        sites = sites - np.asarray(spec.shift, dtype=np.int64)
    h = hash_sites(spec.seed, _TAG_SITE, sites)
    if spec.distribution == "gaussian":
        vals = spec.mean + np.sqrt(spec.var) * ndtri(to_open_unit(h))
    elif spec.distribution == "rademacher_shifted":
        vals = spec.mean + np.where((h >> np.uint64(63)) == 1, 1.0, -1.0)
    else:
        vals = spec.lo + (spec.hi - spec.lo) * to_open_unit(h)
    return vals[0] if scalar else vals


@dataclass(frozen=True)
class BondDisorderSpec:
    """i.i.d. bond potentials for model B: V_b(s) = c_b s^2 + eps_b (cos s - 1).

    c_b ~ uniform[c_min, c_max]; eps_b ~ uniform[0, eps_max] (identically zero when
    eps_max == 0).  ``shift`` realises tau_v on bonds.
    """

    c_min: float = 1.0
    c_max: float = 2.0
    eps_max: float = 0.0
    seed: int = 0
    shift: tuple = field(default=())

    def __post_init__(self):
        if not 0 < self.c_min <= self.c_max:
            raise ValueError("need 0 < c_min <= c_max")
        if self.eps_max < 0:
            raise ValueError("eps_max must be >= 0")

    def shifted(self, v: Sequence[int]) -> "BondDisorderSpec":
        v = np.asarray(v, dtype=np.int64)
        cur = np.asarray(self.shift, dtype=np.int64) if self.shift else np.zeros_like(v)
        return replace(self, shift=tuple(int(t) for t in cur + v))

    def with_seed(self, seed: int) -> "BondDisorderSpec":
        return replace(self, seed=int(seed))

    def envelope(self) -> tuple[float, float, float]:
        """Certified (A, B, C2) with A s^2 - B <= V_b(s) <= C2 s^2 for every bond.

        cos s - 1 lies in [-2, 0], so c_min s^2 - 2 eps_max <= V_b(s) <= c_max s^2.
        """
        return self.c_min, 2.0 * self.eps_max, self.c_max


def canonical_bond(x, y) -> tuple[np.ndarray, np.ndarray]:
    """Lower endpoint and axis of the undirected bond {x, y} (arrays of bonds allowed)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.int64))
    y = np.atleast_2d(np.asarray(y, dtype=np.int64))
    diff = y - x
    if np.any(np.abs(diff).sum(axis=1) != 1):
        raise ValueError("not a nearest-neighbour bond")
    axis = np.argmax(np.abs(diff), axis=1)
    forward = diff[np.arange(len(diff)), axis] > 0
    lo = np.where(forward[:, None], x, y)
    return lo, axis


def omega_at(spec: BondDisorderSpec, x, y=None, axis=None):
    """(c_b, eps_b) for bonds given either as endpoint pairs or as (lower endpoint, axis)."""
    if axis is None:
        lo, axis = canonical_bond(x, y)
        scalar = np.asarray(x).ndim == 1
    else:
        lo = np.atleast_2d(np.asarray(x, dtype=np.int64))
        axis = np.atleast_1d(np.asarray(axis, dtype=np.int64))
        scalar = np.asarray(x).ndim == 1
    if spec.shift:
        lo = lo - np.asarray(spec.shift, dtype=np.int64)
    u = to_open_unit(hash_sites(spec.seed, _TAG_COND, lo, axis))
    c = spec.c_min + (spec.c_max - spec.c_min) * u
    if spec.eps_max > 0:
        eps = spec.eps_max * to_open_unit(hash_sites(spec.seed, _TAG_PERT, lo, axis))
    else:
        eps = np.zeros_like(c)
    if scalar:
        return float(c[0]), float(eps[0])
    return c, eps
