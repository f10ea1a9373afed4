"""Exact Gaussian calculus for quadratic bond potentials.

A configuration on a domain has Gibbs exponent

    -sum_b k_b s_b^2 + sum_b j_b s_b + sum_b c_b + lambda_xi * sum_x xi(x) phi(x),

with s_b = phi(hi_b) - phi(lo_b) over the bonds touching the domain and boundary
heights frozen.  Eliminating the boundary gives exp(-1/2 phi^T Q phi + b^T phi + const)
on the interior, which is integrated in closed form.  For V(s) = a s^2, Q = 2a times the
Dirichlet Laplacian, so the quenched mean is G_lap xi / (2a).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from math import log, pi

import numpy as np
import scipy.sparse as sp

from .disorder import BondDisorderSpec, SiteDisorderSpec, omega_at, xi_at
from .greens import GreenOperator
from .lattice import BoxRegion, Domain, centered_box
from .linalg import SPDSolver, SolverFailure

RESIDUAL_TOL = 1e-10


class NonPositiveWeight(ValueError):
    """A bond stiffness is not strictly positive."""


class BetaTooLarge(ValueError):
    """The beta-augmented operator would lose positive definiteness."""


def _incidence(region: Domain) -> sp.csr_matrix:
    lo, hi, _ = region.bonds()
    m = len(lo)
    rows = np.concatenate([np.arange(m), np.arange(m)])
    cols = np.concatenate([hi, lo])
    vals = np.concatenate([np.ones(m), -np.ones(m)])
    return sp.csr_matrix((vals, (rows, cols)), shape=(m, region.n + region.n_boundary))


class PrecisionOperator:
    """Interior precision matrix, linear term and constant of a quadratic bond model."""

    def __init__(self, region, stiffness, boundary_values, xi, lambda_xi, linear, offset, u, beta=0.0):
        self.region = region
        self.stiffness = stiffness
        self.boundary_values = boundary_values
        self.xi = xi
        self.lambda_xi = lambda_xi
        self.linear = linear
        self.offset = offset
        self.u = u
        self.beta = beta

        n = region.n
        D = _incidence(region)
        self.D = D
        DI, DB = D[:, :n], D[:, n:]
        sB = DB @ boundary_values
        K = sp.diags(stiffness)
        self.Q = (2.0 * (DI.T @ K @ DI)).tocsr()
        b = DI.T @ (linear - 2.0 * stiffness * sB)
        if xi is not None:
            b = b + lambda_xi * xi
        self.b = np.asarray(b, dtype=float)
        self.const = float(np.sum(-stiffness * sB**2 + linear * sB + offset))

    @property
    def n(self) -> int:
        return self.region.n

    @cached_property
    def solver(self) -> SPDSolver:
        return SPDSolver(self.Q)

    def bond_index(self, x, y) -> tuple[int, float]:
        """Row of the bond {x, y} in the incidence matrix and the orientation sign of (x, y)."""
        ex, ey = self.region.ext_index(np.vstack([x, y]))
        lo, hi, _ = self.region.bonds()
        hit = np.flatnonzero((lo == ex) & (hi == ey))
        if hit.size:
            return int(hit[0]), 1.0
        hit = np.flatnonzero((lo == ey) & (hi == ex))
        if hit.size:
            return int(hit[0]), -1.0
        raise KeyError(f"bond {list(x)}-{list(y)} does not touch the domain")


def assemble(
    region: Domain,
    stiffness,
    u=None,
    xi=None,
    lambda_xi: float = 1.0,
    *,
    boundary_values=None,
    linear=None,
    offset=None,
) -> PrecisionOperator:
    """Build the Gaussian weight for V_b(s) = k_b s^2 with tilted (or given) boundary data.

    ``stiffness`` is a scalar or one value per bond of ``region.bonds()``.  ``xi`` is an
    array over the interior sites or a :class:`SiteDisorderSpec`.
    """
    nb = len(region.bonds()[0])
    k = np.broadcast_to(np.asarray(stiffness, dtype=float), (nb,)).copy()
    if not np.all(k > 0):
        raise NonPositiveWeight(f"smallest stiffness {k.min():.3g} is not positive")
    if boundary_values is None:
        uu = np.zeros(region.d) if u is None else np.asarray(u, dtype=float)
        if uu.shape != (region.d,):
            raise ValueError(f"tilt must have {region.d} components")
        boundary_values = region.boundary_sites @ uu
        u = uu
    psi = np.asarray(boundary_values, dtype=float)
    if psi.shape != (region.n_boundary,):
        raise ValueError("one boundary value per boundary site required")
    if isinstance(xi, SiteDisorderSpec):
        xi = xi_at(xi, region.sites)
    if xi is not None:
        xi = np.asarray(xi, dtype=float)
        if xi.shape != (region.n,):
            raise ValueError("one xi value per interior site required")
    j = np.zeros(nb) if linear is None else np.broadcast_to(np.asarray(linear, dtype=float), (nb,)).copy()
    c = np.zeros(nb) if offset is None else np.broadcast_to(np.asarray(offset, dtype=float), (nb,)).copy()
    return PrecisionOperator(region, k, psi, xi, float(lambda_xi), j, c, u)


@dataclass(frozen=True)
class QuenchedGaussianSolution:
    op: PrecisionOperator
    mean: np.ndarray
    log_Z: float
    residual: float

    @property
    def mean_ext(self) -> np.ndarray:
        """Mean heights on interior then boundary sites (extended indexing)."""
        return np.concatenate([self.mean, self.op.boundary_values])

    def bond_means(self) -> np.ndarray:
        """Mean of phi(hi) - phi(lo) for every bond of ``region.bonds()``."""
        return self.op.D @ self.mean_ext

    def gradient_mean(self, x, y) -> float:
        row, sign = self.op.bond_index(x, y)
        return sign * float((self.op.D[row] @ self.mean_ext)[0])

    def bond_variances(self, rows) -> np.ndarray:
        """Variance of phi(hi) - phi(lo) for the requested bond rows."""
        rows = np.atleast_1d(rows)
        E = self.op.D[rows][:, : self.op.n].toarray().T
        Z = self.op.solver.solve(E)
        Z = Z.reshape(E.shape)
        return np.einsum("ij,ij->j", E, Z)

    def gradient_second_moment(self, x, y, center: float = 0.0) -> float:
        """E[(phi(y) - phi(x) - center)^2]."""
        row, _ = self.op.bond_index(x, y)
        var = float(self.bond_variances([row])[0])
        return var + (self.gradient_mean(x, y) - center) ** 2


def _check(op: PrecisionOperator, m: np.ndarray) -> float:
    res = float(np.max(np.abs(op.Q @ m - op.b))) if op.n else 0.0
    if res > RESIDUAL_TOL:
        raise SolverFailure(f"stationarity residual {res:.2e} above {RESIDUAL_TOL}")
    return res


def quenched_mean(op: PrecisionOperator) -> np.ndarray:
    m = op.solver.solve(op.b)
    _check(op, m)
    return m


def log_partition(op: PrecisionOperator) -> float:
    """log of the integral of the Gibbs weight over the interior heights (exact)."""
    m = quenched_mean(op)
    return 0.5 * op.n * log(2 * pi) - 0.5 * op.solver.logdet() + 0.5 * float(op.b @ m) + op.const


def solve(op: PrecisionOperator) -> QuenchedGaussianSolution:
    m = op.solver.solve(op.b)
    res = _check(op, m)
    logZ = 0.5 * op.n * log(2 * pi) - 0.5 * op.solver.logdet() + 0.5 * float(op.b @ m) + op.const
    return QuenchedGaussianSolution(op, m, logZ, res)


def surface_tension_exact(op: PrecisionOperator) -> float:
    """sigma = -log Z / |Lambda|."""
    return -log_partition(op) / op.n


def augment(op: PrecisionOperator, beta: float, u=None) -> PrecisionOperator:
    """Add beta * sum_b (s_b - u.(hi - lo))^2 to the exponent."""
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    if beta >= op.stiffness.min():
        raise BetaTooLarge(f"beta={beta} must stay below the smallest stiffness {op.stiffness.min():.4g}")
    u = op.u if u is None else np.asarray(u, dtype=float)
    if u is None:
        raise ValueError("tilt required when the operator has custom boundary data")
    _, _, axis = op.region.bonds()
    ub = np.asarray(u, dtype=float)[axis]
    return PrecisionOperator(
        op.region,
        op.stiffness - beta,
        op.boundary_values,
        op.xi,
        op.lambda_xi,
        op.linear - 2.0 * beta * ub,
        op.offset + beta * ub**2,
        op.u,
        op.beta + beta,
    )


def f_beta(op: PrecisionOperator, beta: float, u=None) -> float:
    """log E[exp(beta/2 * sum over ordered neighbour pairs of (phi(x)-phi(y)-u.(x-y))^2)]."""
    if beta == 0:
        return 0.0
    return log_partition(augment(op, beta, u)) - log_partition(op)


def f_beta_bound(region: Domain, beta: float, u, A: float, B: float, C2: float, V0: float = 0.0) -> tuple[float, float]:
    """Deterministic part and disorder coefficient of the upper bound on f_beta.

    Returns (F_bar, alpha) so that f_beta <= F_bar + alpha/2 * <xi, G xi>.
    """
    if beta >= A:
        raise BetaTooLarge("need beta < A")
    zero = np.zeros(region.d)
    logz_soft = log_partition(assemble(region, A - beta, zero))
    logz_stiff = log_partition(assemble(region, C2 / 2, zero))
    pairs = region.closure_pair_counts()
    n_ordered = 2 * int(pairs.sum())
    tilt_sq = 2.0 * float(pairs @ np.asarray(u, dtype=float) ** 2)
    F_bar = logz_soft - logz_stiff + n_ordered * (B + V0) - 0.5 * (A - beta - C2 / 2) * tilt_sq
    alpha = 1.0 / (A - beta) - 2.0 / C2
    return F_bar, alpha


# ------------------------------------------------------------- model helpers
def bond_conductances(region: Domain, spec: BondDisorderSpec) -> np.ndarray:
    """c_b for every bond of ``region.bonds()``."""
    lo, _, axis = region.bonds()
    c, _ = omega_at(spec, region.ext_sites[lo], axis=axis)
    return np.atleast_1d(c)


@dataclass(frozen=True)
class QuadraticModel:
    """Model A with V(s) = a s^2 and site field xi, or model B with V_b(s) = c_b s^2."""

    a: float = 0.5
    xi: SiteDisorderSpec | None = None
    bonds: BondDisorderSpec | None = None
    lambda_xi: float = 1.0

    def __post_init__(self):
        if self.bonds is not None and self.bonds.eps_max > 0:
            raise ValueError("the exact engine needs purely quadratic bond potentials (eps_max = 0)")
        if self.a <= 0:
            raise NonPositiveWeight("a must be positive")

    def stiffness(self, region: Domain):
        return self.a if self.bonds is None else bond_conductances(region, self.bonds)

    def with_seed(self, seed: int) -> "QuadraticModel":
        from dataclasses import replace

        return replace(
            self,
            xi=None if self.xi is None else self.xi.with_seed(seed),
            bonds=None if self.bonds is None else self.bonds.with_seed(seed),
        )

    def operator(self, region: Domain, u=None) -> PrecisionOperator:
        return assemble(region, self.stiffness(region), u, self.xi, self.lambda_xi)


def averaged_gradient_mean(model: QuadraticModel, region: BoxRegion, u, shifts=None) -> np.ndarray:
    """Mean of eta(0, e_k), k = 0..d-1, under the average over x of the measures on region + x.

    The disorder stays attached to Z^d while the volume moves.  ``shifts`` defaults to the
    sites of ``region``.
    """
    d = region.d
    shifts = region.sites if shifts is None else np.atleast_2d(np.asarray(shifts, dtype=np.int64))
    u = np.asarray(u, dtype=float)
    origin = np.zeros(d, dtype=np.int64)
    targets = np.vstack([origin, np.eye(d, dtype=np.int64)])
    out = np.zeros(d)
    if model.bonds is None:
        # translation-invariant stiffness: one factorisation, one right-hand side per shift
        base = assemble(region, model.a, u)
        n = region.n
        rhs = np.repeat(base.b[:, None], len(shifts), axis=1)
        if model.xi is not None:
            for i, x in enumerate(shifts):
                rhs[:, i] += model.lambda_xi * xi_at(model.xi, region.sites + x)
        tilt_const = shifts @ u
        # boundary heights of region + x are psi_u(z + x) = psi_u(z) + u.x; a constant shift
        # of the boundary moves the mean by the same constant and leaves gradients unchanged
        M = base.solver.solve(rhs).reshape(n, len(shifts))
        for i, x in enumerate(shifts):
            ext = np.concatenate([M[:, i], region.boundary_sites @ u]) + tilt_const[i]
            idx = region.ext_index(targets - x)
            if np.any(idx < 0):
                raise KeyError("target bond outside a shifted volume")
            out += ext[idx[1:]] - ext[idx[0]]
        return out / len(shifts)
    # random conductances: the geometry is shared, only the stiffness moves with the volume
    base = assemble(region, 1.0, u)
    n = region.n
    DI = base.D[:, :n].tocsc()
    sB = base.D[:, n:] @ base.boundary_values
    lo, _, axis = region.bonds()
    lo_sites = region.ext_sites[lo]
    for x in shifts:
        k, _ = omega_at(model.bonds, lo_sites + x, axis=axis)
        Q = 2.0 * (DI.T @ sp.diags(k) @ DI)
        m = SPDSolver(Q).solve(DI.T @ (-2.0 * k * sB))
        ext = np.concatenate([m, base.boundary_values])
        idx = region.ext_index(targets - x)
        if np.any(idx < 0):
            raise KeyError("target bond outside a shifted volume")
        out += ext[idx[1:]] - ext[idx[0]]
    return out / len(shifts)


# ------------------------------------------------------------ delocalisation
def deloc_sums(d: int, N: int, method: str | None = None) -> tuple[float, float]:
    """(sum_z G_lap(0, z)^2, sum_z (G_lap(0, z) - G_lap(e_1, z))^2) on Lambda_N."""
    if d < 3:
        raise ValueError("delocalisation sums are studied for d >= 3")
    region = centered_box(N, d)
    if method is None and d >= 4:
        # two right-hand sides only: CG beats a direct factorisation with 4d/5d fill-in
        method = "iterative"
    op = GreenOperator(region, method)
    e1 = np.zeros(d, dtype=np.int64)
    e1[0] = 1
    i0, i1 = region.index(np.vstack([np.zeros(d, dtype=np.int64), e1]))
    rhs = np.zeros((region.n, 2))
    rhs[i0, 0] = 1.0
    rhs[i1, 1] = 1.0
    g = op.solve_lap(rhs).reshape(region.n, 2)
    return float(np.sum(g[:, 0] ** 2)), float(np.sum((g[:, 0] - g[:, 1]) ** 2))
