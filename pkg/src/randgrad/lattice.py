"""Lattice geometry on Z^d: finite domains, boxes, bonds, gradient fields and block partitions.

Sites of a domain are indexed row-major (lexicographic in the coordinates); boundary
sites follow the interior in an "extended" index space, also row-major.  Every
linear-algebra module in the package relies on that ordering.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

PLAQUETTE_TOL = 1e-10


class PlaquetteViolation(ValueError):
    """A bond field is not the gradient of any height field."""


class OutOfSupport(KeyError):
    """A field was evaluated outside the region on which it is defined."""


def _as_site_array(sites, d: int | None = None) -> np.ndarray:
    arr = np.asarray(sites, dtype=np.int64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if d is not None and arr.shape[1] != d:
        raise ValueError(f"expected sites of dimension {d}, got {arr.shape[1]}")
    return arr


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


class Domain:
    """A finite subset of Z^d with its outer boundary and nearest-neighbour structure.

    The domain is stored as a boolean mask on its bounding box padded by one layer,
    so that the boundary (l1-distance one exterior sites) also fits on the grid.
    """

    def __init__(self, mask: np.ndarray, lo: Sequence[int]):
        mask = np.asarray(mask, dtype=bool)
        if not mask.any():
            raise ValueError("empty domain")
        self.d = mask.ndim
        pad = np.pad(mask, 1)
        self._origin = np.asarray(lo, dtype=np.int64) - 1
        self._mask = _readonly(pad)

        grown = pad.copy()
        for k in range(self.d):
            grown |= np.roll(pad, 1, axis=k) | np.roll(pad, -1, axis=k)
        bmask = grown & ~pad

        self.sites = _readonly(np.argwhere(pad).astype(np.int64) + self._origin)
        self.boundary_sites = _readonly(np.argwhere(bmask).astype(np.int64) + self._origin)
        self.n = len(self.sites)
        self.n_boundary = len(self.boundary_sites)

        ext = np.full(pad.shape, -1, dtype=np.int64)
        ext[pad] = np.arange(self.n)
        ext[bmask] = self.n + np.arange(self.n_boundary)
        self._ext = _readonly(ext)

        # neighbour table in extended indices, order (-e_0, +e_0, -e_1, +e_1, ...)
        grid = np.argwhere(pad)
        nbr = np.empty((self.n, 2 * self.d), dtype=np.int64)
        for k in range(self.d):
            for s, step in enumerate((-1, 1)):
                g = grid.copy()
                g[:, k] += step
                nbr[:, 2 * k + s] = ext[tuple(g.T)]
        self.neighbors = _readonly(nbr)

    # ---------------------------------------------------------------- lookups
    def ext_index(self, sites) -> np.ndarray:
        """Extended index of each site (interior first, then boundary); -1 if neither."""
        arr = _as_site_array(sites, self.d) - self._origin
        shape = np.asarray(self._ext.shape)
        ok = np.all((arr >= 0) & (arr < shape), axis=1)
        out = np.full(len(arr), -1, dtype=np.int64)
        out[ok] = self._ext[tuple(arr[ok].T)]
        return out

    def index(self, sites) -> np.ndarray:
        """Row-major interior index of each site; -1 for sites outside the domain."""
        idx = self.ext_index(sites)
        idx[idx >= self.n] = -1
        return idx

    def contains(self, site) -> bool:
        return bool(self.index(site)[0] >= 0)

    @property
    def ext_sites(self) -> np.ndarray:
        return np.vstack([self.sites, self.boundary_sites])

    def __len__(self) -> int:
        return self.n

    # ------------------------------------------------------------------ bonds
    def bonds(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Undirected bonds with at least one endpoint in the domain.

        Returns ``(lo, hi, axis)`` in extended indices, canonically oriented from the
        lexicographically smaller endpoint ``lo`` to ``hi = lo + e_axis``.
        """
        lo, hi, ax = [], [], []
        for k in range(self.d):
            minus = self.neighbors[:, 2 * k]
            plus = self.neighbors[:, 2 * k + 1]
            inner = np.arange(self.n)
            # (x, x+e_k) for every interior x
            lo.append(inner)
            hi.append(plus)
            ax.append(np.full(self.n, k))
            # (x-e_k, x) where x-e_k is a boundary site
            b = minus >= self.n
            lo.append(minus[b])
            hi.append(inner[b])
            ax.append(np.full(int(b.sum()), k))
        return np.concatenate(lo), np.concatenate(hi), np.concatenate(ax)

    def laplacian(self, weights: np.ndarray | None = None):
        """Weighted Dirichlet graph Laplacian on the interior, as a CSR matrix.

        ``weights`` is aligned with :meth:`bonds`; default all ones, giving 2d*I - adjacency.
        """
        import scipy.sparse as sp

        lo, hi, _ = self.bonds()
        w = np.ones(len(lo)) if weights is None else np.asarray(weights, dtype=float)
        diag = np.zeros(self.n)
        np.add.at(diag, lo[lo < self.n], w[lo < self.n])
        np.add.at(diag, hi[hi < self.n], w[hi < self.n])
        both = (lo < self.n) & (hi < self.n)
        rows = np.concatenate([lo[both], hi[both], np.arange(self.n)])
        cols = np.concatenate([hi[both], lo[both], np.arange(self.n)])
        vals = np.concatenate([-w[both], -w[both], diag])
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.n, self.n))

    def closure_pair_counts(self) -> np.ndarray:
        """Per axis, the number of undirected nearest-neighbour pairs inside the domain plus its boundary."""
        occupied = self._ext >= 0
        counts = []
        for k in range(self.d):
            a = np.take(occupied, np.arange(occupied.shape[k] - 1), axis=k)
            b = np.take(occupied, np.arange(1, occupied.shape[k]), axis=k)
            counts.append(int(np.count_nonzero(a & b)))
        return np.asarray(counts, dtype=np.int64)

    def parity(self) -> np.ndarray:
        """Checkerboard colour (sum of coordinates mod 2) of each interior site."""
        return (self.sites.sum(axis=1) % 2).astype(np.int64)


class BoxRegion(Domain):
    """The rectangle {z : a_i <= z_i <= l_i} with a_i < l_i for every axis."""

    def __init__(self, a: Sequence[int], l: Sequence[int]):
        a = np.asarray(a, dtype=np.int64).ravel()
        l = np.asarray(l, dtype=np.int64).ravel()
        if a.shape != l.shape or a.size == 0:
            raise ValueError("a and l must be nonempty vectors of equal length")
        if np.any(a >= l):
            raise ValueError(f"degenerate box: need a_i < l_i, got a={a.tolist()}, l={l.tolist()}")
        self.a = _readonly(a)
        self.l = _readonly(l)
        self.shape = tuple(int(s) for s in l - a + 1)
        super().__init__(np.ones(self.shape, dtype=bool), a)

    def __repr__(self) -> str:
        return f"BoxRegion(a={self.a.tolist()}, l={self.l.tolist()})"

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, BoxRegion)
            and np.array_equal(self.a, other.a)
            and np.array_equal(self.l, other.l)
        )

    def __hash__(self) -> int:
        return hash((tuple(self.a.tolist()), tuple(self.l.tolist())))

    def translate(self, v: Sequence[int]) -> "BoxRegion":
        v = np.asarray(v, dtype=np.int64)
        return BoxRegion(self.a + v, self.l + v)

    def grid_index(self, sites) -> tuple[np.ndarray, ...]:
        """Array indices into a ``self.shape`` array; raises OutOfSupport outside the box."""
        arr = _as_site_array(sites, self.d) - self.a
        if np.any(arr < 0) or np.any(arr >= np.asarray(self.shape)):
            raise OutOfSupport(f"site(s) outside {self!r}")
        return tuple(arr.T)


def centered_box(N: int, d: int) -> BoxRegion:
    """Lambda_N = [-N, N]^d."""
    return BoxRegion([-N] * d, [N] * d)


def corner_box(N: int, d: int) -> BoxRegion:
    """Lambda_[0,N] = [0, N]^d."""
    return BoxRegion([0] * d, [N] * d)


def rectangle(a: Sequence[int], l: Sequence[int]) -> Domain:
    """The rectangle {z : a_i <= z_i <= l_i}, allowing a_i == l_i (but not a_i > l_i)."""
    a = np.asarray(a, dtype=np.int64).ravel()
    l = np.asarray(l, dtype=np.int64).ravel()
    if np.all(a < l):
        return BoxRegion(a, l)
    if np.any(a > l):
        raise ValueError(f"empty rectangle: a={a.tolist()}, l={l.tolist()}")
    return Domain(np.ones(tuple(l - a + 1), dtype=bool), a)


def ball(r: float, d: int) -> Domain:
    """Euclidean ball B_r = {x : |x| < r} (strict inequality)."""
    R = int(np.ceil(r))
    ax = np.arange(-R, R + 1)
    grids = np.meshgrid(*([ax] * d), indexing="ij")
    r2 = sum(g.astype(float) ** 2 for g in grids)
    return Domain(r2 < r * r, [-R] * d)


def boundary(region: Domain) -> np.ndarray:
    """Exterior sites at l1-distance one from the region, row-major order."""
    return region.boundary_sites.copy()


def symmetric_difference_size(region: BoxRegion, v: Sequence[int]) -> int:
    """|Lambda symmetric-difference (Lambda + v)| for a box."""
    v = np.abs(np.asarray(v, dtype=np.int64))
    overlap = np.prod(np.maximum(0, np.asarray(region.shape) - v))
    return int(2 * (region.n - overlap))


# ---------------------------------------------------------------------- fields
@dataclass(frozen=True)
class HeightField:
    """Heights phi(x) on every site of a box, stored as an array of ``region.shape``."""

    region: BoxRegion
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values)
        if vals.shape != self.region.shape:
            raise ValueError(f"values shape {vals.shape} != region shape {self.region.shape}")
        object.__setattr__(self, "values", _readonly(vals))

    def at(self, site) -> float:
        return self.values[self.region.grid_index(site)][0]

    def gradient(self) -> "BondField":
        return BondField(self.region, tuple(np.diff(self.values, axis=k) for k in range(self.region.d)))


@dataclass(frozen=True)
class BondField:
    """One value per undirected bond of a box, stored for the canonical orientation.

    ``values[k]`` holds eta(z, z + e_k); it has the box shape with one fewer entry along
    axis k.  Reading a bond against its orientation negates the value.
    """

    region: BoxRegion
    values: tuple

    def __post_init__(self):
        shape = np.asarray(self.region.shape)
        vals = []
        for k, v in enumerate(self.values):
            v = np.array(v)
            want = shape.copy()
            want[k] -= 1
            if v.shape != tuple(want):
                raise ValueError(f"axis {k}: expected shape {tuple(want)}, got {v.shape}")
            vals.append(_readonly(v))
        if len(vals) != self.region.d:
            raise ValueError("need one array per axis")
        object.__setattr__(self, "values", tuple(vals))

    def at(self, x, y) -> float:
        """Directed read eta((x, y))."""
        x = np.asarray(x, dtype=np.int64)
        y = np.asarray(y, dtype=np.int64)
        diff = y - x
        if np.abs(diff).sum() != 1:
            raise ValueError("not a nearest-neighbour bond")
        k = int(np.flatnonzero(diff)[0])
        lo, sign = (x, 1.0) if diff[k] > 0 else (y, -1.0)
        idx = lo - self.region.a
        if np.any(idx < 0) or idx[k] >= self.region.shape[k] - 1 or np.any(idx >= self.region.shape):
            raise OutOfSupport(f"bond {x.tolist()}->{y.tolist()} outside {self.region!r}")
        return sign * self.values[k][tuple(idx)]

    def plaquette_sums(self) -> np.ndarray:
        """Signed loop sums around every unit square, all axis pairs concatenated."""
        out = []
        d = self.region.d
        for k in range(d):
            for m in range(k + 1, d):
                ek, em = self.values[k], self.values[m]
                # z -> z+e_k -> z+e_k+e_m -> z+e_m -> z
                a = _trim(ek, m)
                b = _trim(em, k, start=1)
                c = _trim(ek, m, start=1)
                e = _trim(em, k)
                out.append((a + b - c - e).ravel())
        if not out:
            return np.zeros(0)
        return np.concatenate(out)

    def check_plaquettes(self, tol: float = PLAQUETTE_TOL) -> None:
        sums = self.plaquette_sums()
        if sums.size == 0:
            return
        exact = all(np.issubdtype(v.dtype, np.integer) for v in self.values)
        worst = np.max(np.abs(sums))
        if (exact and worst != 0) or (not exact and worst > tol):
            raise PlaquetteViolation(f"largest plaquette sum {worst!r} exceeds tolerance")


def _trim(arr: np.ndarray, axis: int, start: int = 0) -> np.ndarray:
    """Drop one entry along ``axis`` (the last if start == 0, else the first)."""
    sl = [slice(None)] * arr.ndim
    sl[axis] = slice(start, arr.shape[axis] - 1 + start)
    return arr[tuple(sl)]


def integrate_heights(eta: BondField, phi0: float, origin) -> HeightField:
    """Rebuild heights from gradients along axis-ordered staircase paths from ``origin``."""
    eta.check_plaquettes()
    region = eta.region
    o = np.asarray(region.grid_index(origin)).ravel()
    dtype = np.result_type(*(v.dtype for v in eta.values), np.asarray(phi0).dtype)
    phi = np.zeros(region.shape, dtype=dtype)

    # after step k, phi is filled on {z : z_j = o_j for j > k}
    sl = [slice(None)] * region.d
    for j in range(region.d):
        sl[j] = slice(o[j], o[j] + 1)
    phi[tuple(sl)] = phi0
    for k in range(region.d):
        src = [slice(None)] * region.d
        for j in range(k + 1, region.d):
            src[j] = slice(o[j], o[j] + 1)
        e = eta.values[k][tuple(src)]
        prefix = np.concatenate([np.zeros_like(np.take(e, [0], axis=k)), np.cumsum(e, axis=k)], axis=k)
        prefix = prefix - np.take(prefix, [o[k]], axis=k)
        base_idx = list(src)
        base_idx[k] = slice(o[k], o[k] + 1)
        phi[tuple(src)] = phi[tuple(base_idx)] + prefix
    return HeightField(region, phi)


def shift_field(f, v):
    """Translate a height or bond field: (tau_v f)(s) = f(s - v)."""
    region = f.region.translate(v)
    if isinstance(f, HeightField):
        return HeightField(region, f.values)
    if isinstance(f, BondField):
        return BondField(region, f.values)
    raise TypeError(f"cannot shift {type(f).__name__}")


# ------------------------------------------------------------ block partitions
@dataclass(frozen=True)
class BlockPartition:
    """Disjoint decomposition of [0, N]^d into aligned cubes of n sites per side plus slabs.

    ``cubes`` and ``slabs`` hold inclusive ``(lo, hi)`` corner pairs.  Slab s collects the
    sites whose first out-of-cube coordinate is s.
    """

    N: int
    n: int
    d: int
    k: int
    cubes: tuple = field(repr=False)
    slabs: tuple = field(repr=False)

    def parts(self) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        yield from self.cubes
        yield from self.slabs

    def size(self, part) -> int:
        lo, hi = part
        return int(np.prod(hi - lo + 1))

    @property
    def slab_fraction(self) -> float:
        return sum(self.size(s) for s in self.slabs) / (self.N + 1) ** self.d


def block_partition(N: int, n: int, d: int) -> BlockPartition:
    if not 1 <= n <= N + 1:
        raise ValueError("need 1 <= n <= N + 1")
    k = (N + 1) // n
    cubes = []
    for a in np.ndindex(*([k] * d)):
        lo = np.asarray(a, dtype=np.int64) * n
        cubes.append((_readonly(lo), _readonly(lo + n - 1)))
    slabs = []
    if k * n <= N:
        for s in range(d):
            lo = np.zeros(d, dtype=np.int64)
            hi = np.full(d, N, dtype=np.int64)
            hi[:s] = k * n - 1
            lo[s] = k * n
            slabs.append((_readonly(lo), _readonly(hi)))
    return BlockPartition(N=N, n=n, d=d, k=k, cubes=tuple(cubes), slabs=tuple(slabs))
