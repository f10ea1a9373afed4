"""Single-site MCMC for finite-volume gradient models with frozen boundary heights.

Gibbs weight: exp(-sum_b V_b(phi(y) - phi(x)) + lambda_xi * sum_x xi(x) phi(x)), the sum
running over bonds with at least one endpoint in the domain.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _accel
from .disorder import BondDisorderSpec, omega_at
from .lattice import Domain

log = logging.getLogger(__name__)

MIN_BATCHES = 20
TARGET_ACCEPTANCE = 0.44


class InsufficientSamples(RuntimeError):
    """Fewer completed batches than needed for a batch-means error bar."""


class CertificationError(ValueError):
    """A potential violates the growth bounds it claims."""


# ------------------------------------------------------------------ potentials
@dataclass(frozen=True)
class PotentialSpec:
    """Bond potential family.

    Model A (``bonds is None``): V(s) = a s^2 + eps cos(s), with eps = 0 for ``quadratic``.
    Model B: V_b(s) = c_b s^2 + eps_b (cos(s) - 1) with (c_b, eps_b) drawn per bond.
    """

    family: str = "quadratic"
    a: float = 0.5
    eps: float = 0.0
    bonds: BondDisorderSpec | None = None

    def __post_init__(self):
        if self.family not in ("quadratic", "quadratic_cosine"):
            raise ValueError(f"unknown potential family {self.family!r}")
        if self.a <= 0:
            raise ValueError("a must be positive")
        if self.eps < 0:
            raise ValueError("eps must be nonnegative")
        if self.family == "quadratic" and self.eps != 0:
            raise ValueError("the quadratic family has eps = 0")
        if self.bonds is not None and self.family == "quadratic" and self.bonds.eps_max > 0:
            raise ValueError("bond perturbations require the quadratic_cosine family")

    @property
    def is_quadratic(self) -> bool:
        if self.bonds is not None:
            return self.bonds.eps_max == 0
        return self.eps == 0

    def envelope(self) -> tuple[float, float, float]:
        """(A, B, C2).

        Model A: V(s) >= A s^2 - B and V'' <= C2.  Model B: A s^2 - B <= V_b(s) <= C2 s^2.
        """
        if self.bonds is not None:
            return self.bonds.envelope()
        return self.a, self.eps, 2 * self.a + self.eps

    def bond_parameters(self, region: Domain) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per bond of ``region.bonds()``: quadratic coefficient, cosine amplitude, constant."""
        lo, _, axis = region.bonds()
        if self.bonds is None:
            m = len(lo)
            return np.full(m, self.a), np.full(m, self.eps), np.zeros(m)
        c, e = omega_at(self.bonds, region.ext_sites[lo], axis=axis)
        c, e = np.atleast_1d(c), np.atleast_1d(e)
        return c, e, -e

    def with_seed(self, seed: int) -> "PotentialSpec":
        if self.bonds is None:
            return self
        from dataclasses import replace

        return replace(self, bonds=self.bonds.with_seed(seed))

    # model A scalar potential and derivatives
    def V(self, s):
        s = np.asarray(s, dtype=float)
        return self.a * s * s + self.eps * np.cos(s)

    def dV(self, s):
        s = np.asarray(s, dtype=float)
        return 2 * self.a * s - self.eps * np.sin(s)

    def d2V(self, s):
        s = np.asarray(s, dtype=float)
        return 2 * self.a - self.eps * np.cos(s)


def certify(potential: PotentialSpec, grid=None, n_bonds: int = 2000) -> tuple[float, float, float]:
    """Check the claimed envelope on a grid of s values; return it."""
    s = np.linspace(-50, 50, 20001) if grid is None else np.asarray(grid, dtype=float)
    A, B, C2 = potential.envelope()
    tol = 1e-12
    if potential.bonds is None:
        if np.any(potential.V(s) < A * s * s - B - tol):
            raise CertificationError("V(s) >= A s^2 - B violated")
        if np.any(potential.d2V(s) > C2 + tol):
            raise CertificationError("V'' <= C2 violated")
        return A, B, C2
    sites = np.column_stack([np.arange(n_bonds), np.zeros(n_bonds, dtype=np.int64)])
    c, e = omega_at(potential.bonds, sites, axis=np.zeros(n_bonds, dtype=np.int64))
    v = c[:, None] * s**2 + e[:, None] * (np.cos(s) - 1.0)
    if np.any(v < A * s**2 - B - tol) or np.any(v > C2 * s**2 + tol):
        raise CertificationError("A s^2 - B <= V_b(s) <= C2 s^2 violated")
    return A, B, C2


# ----------------------------------------------------------------- chain state
@dataclass
class ChainState:
    """Heights on interior then boundary sites; boundary entries are never modified."""

    phi: np.ndarray
    n: int
    rng: np.random.Generator
    sweeps: int = 0
    width: float = 1.0
    accepted: int = 0
    proposed: int = 0

    @property
    def heights(self) -> np.ndarray:
        return self.phi[: self.n]

    @property
    def boundary(self) -> np.ndarray:
        return self.phi[self.n :]

    @property
    def acceptance(self) -> float:
        return self.accepted / self.proposed if self.proposed else float("nan")


def _neighbour_bonds(region: Domain) -> np.ndarray:
    """Bond index (into ``region.bonds()``) for every (site, neighbour slot)."""
    lo, hi, _ = region.bonds()
    m = region.n + region.n_boundary
    keys = np.minimum(lo, hi) * m + np.maximum(lo, hi)
    order = np.argsort(keys)
    x = np.repeat(np.arange(region.n), region.neighbors.shape[1]).reshape(region.neighbors.shape)
    y = region.neighbors
    want = np.minimum(x, y) * m + np.maximum(x, y)
    pos = np.searchsorted(keys[order], want)
    return order[pos]


class Chain:
    """A Markov chain targeting the finite-volume Gibbs measure of one disorder realisation."""

    def __init__(
        self,
        region: Domain,
        potential: PotentialSpec,
        u=None,
        xi=None,
        lambda_xi: float = 1.0,
        seed: int = 0,
        scan: str = "checkerboard",
        boundary_values=None,
        width: float = 1.0,
        init=None,
    ):
        if scan not in ("checkerboard", "random"):
            raise ValueError("scan must be 'checkerboard' or 'random'")
        self.region = region
        self.potential = potential
        self.scan = scan
        self.lambda_xi = float(lambda_xi)
        self.u = np.zeros(region.d) if u is None else np.asarray(u, dtype=float)
        n = region.n
        psi = region.boundary_sites @ self.u if boundary_values is None else np.asarray(boundary_values, float)
        self.xi = np.zeros(n) if xi is None else np.asarray(xi, dtype=float)
        if self.xi.shape != (n,):
            raise ValueError("one xi value per interior site required")

        self.bond_lo, self.bond_hi, self.bond_axis = region.bonds()
        self.bond_k, self.bond_eps, self.bond_const = potential.bond_parameters(region)
        slot = _neighbour_bonds(region)
        self.nbr = np.ascontiguousarray(region.neighbors)
        self.k = np.ascontiguousarray(self.bond_k[slot])
        self.eps = np.ascontiguousarray(self.bond_eps[slot])
        self.field = np.ascontiguousarray(self.lambda_xi * self.xi)
        self._eps_base = (self.eps.copy(), self.bond_eps.copy(), self.bond_const.copy())

        parity = region.parity()
        self._cb_order = np.concatenate([np.flatnonzero(parity == 0), np.flatnonzero(parity == 1)]).astype(np.int64)
        self._cb_starts = np.array([0, int(np.sum(parity == 0)), n], dtype=np.int64)

        if init is None:
            interior = region.sites @ self.u if boundary_values is None else np.full(n, psi.mean() if psi.size else 0.0)
        else:
            interior = np.asarray(init, dtype=float)
        phi = np.concatenate([interior, psi]).astype(float)
        self.state = ChainState(phi=phi, n=n, rng=np.random.default_rng(np.random.SeedSequence(seed)), width=width)

    def scale_perturbation(self, lam: float) -> None:
        """Multiply every cosine amplitude (and its constant) by ``lam``; used for interpolation."""
        base = self._eps_base
        self.eps = np.ascontiguousarray(lam * base[0])
        self.bond_eps = lam * base[1]
        self.bond_const = lam * base[2]

    # ---------------------------------------------------------------- sweeps
    def _order(self):
        n = self.region.n
        if self.scan == "checkerboard":
            return self._cb_order, self._cb_starts
        order = self.state.rng.integers(0, n, size=n).astype(np.int64)
        return order, np.arange(n + 1, dtype=np.int64)

    def heat_bath_sweep(self) -> ChainState:
        if not self.potential.is_quadratic:
            raise ValueError("heat-bath updates need an exactly quadratic potential")
        order, starts = self._order()
        normals = self.state.rng.standard_normal(len(order))
        _accel.heat_bath(self.state.phi, self.nbr, self.k, self.field, order, starts, normals)
        self.state.sweeps += 1
        return self.state

    def metropolis_sweep(self, width: float | None = None) -> ChainState:
        w = self.state.width if width is None else float(width)
        order, starts = self._order()
        normals = self.state.rng.standard_normal(len(order))
        uniforms = self.state.rng.random(len(order))
        acc = _accel.metropolis(
            self.state.phi, self.nbr, self.k, self.eps, self.field, order, starts, w, normals, uniforms
        )
        self.state.accepted += int(acc)
        self.state.proposed += len(order)
        self.state.sweeps += 1
        return self.state

    # ----------------------------------------------------------- observables
    def bond_gradients(self, phi=None) -> np.ndarray:
        phi = self.state.phi if phi is None else phi
        return phi[self.bond_hi] - phi[self.bond_lo]

    def site_forces(self, phi=None) -> np.ndarray:
        """dH/dphi(x) = sum over neighbours y of V'(phi(x) - phi(y))."""
        phi = self.state.phi if phi is None else phi
        return _accel.site_forces(phi, self.nbr, self.k, self.eps, self.region.n)

    def bond_energy(self, phi=None) -> tuple[float, float]:
        """(sum_b k_b s_b^2, sum_b [eps_b cos(s_b) + const_b])."""
        s = self.bond_gradients(phi)
        return float(np.sum(self.bond_k * s * s)), float(np.sum(self.bond_eps * np.cos(s) + self.bond_const))

    def perturbation_energy(self, phi=None) -> float:
        """sum_b [eps_b cos(s_b) + const_b] at the unscaled amplitudes."""
        s = self.bond_gradients(phi)
        _, e, c = self._eps_base
        return float(np.sum(e * np.cos(s) + c))

    def energy(self, phi=None) -> float:
        phi = self.state.phi if phi is None else phi
        q, c = self.bond_energy(phi)
        return q + c - float(self.field @ phi[: self.region.n])


def heat_bath_sweep(chain: Chain) -> ChainState:
    return chain.heat_bath_sweep()


def metropolis_sweep(chain: Chain, proposal_width: float | None = None) -> ChainState:
    return chain.metropolis_sweep(proposal_width)


def energy_density(chain: Chain, u=None, phi=None) -> float:
    """(1 / (2|Lambda|)) * sum over ordered neighbour pairs of (phi(x) - phi(y) - u.(x - y))^2."""
    u = chain.u if u is None else np.asarray(u, dtype=float)
    s = chain.bond_gradients(phi) - u[chain.bond_axis]
    return float(np.sum(s * s)) / chain.region.n


# ------------------------------------------------------------- accumulators
class ObservableAccumulator:
    """Running mean/variance plus non-overlapping batch means for a vector observable."""

    def __init__(self, batch_size: int, min_batches: int = MIN_BATCHES):
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        self.batch_size = int(batch_size)
        self.min_batches = int(min_batches)
        self.count = 0
        self._mean = None
        self._m2 = None
        self._batch_sum = None
        self._in_batch = 0
        self._batches: list[np.ndarray] = []

    def add(self, value) -> None:
        x = np.atleast_1d(np.asarray(value, dtype=float))
        if self._mean is None:
            self._mean = np.zeros_like(x)
            self._m2 = np.zeros_like(x)
            self._batch_sum = np.zeros_like(x)
        self.count += 1
        delta = x - self._mean
        self._mean += delta / self.count
        self._m2 += delta * (x - self._mean)
        self._batch_sum += x
        self._in_batch += 1
        if self._in_batch == self.batch_size:
            self._batches.append(self._batch_sum / self.batch_size)
            self._batch_sum = np.zeros_like(x)
            self._in_batch = 0

    @property
    def mean(self) -> np.ndarray:
        if self._mean is None:
            raise InsufficientSamples("no samples")
        return self._mean.copy()

    @property
    def variance(self) -> np.ndarray:
        if self.count < 2:
            raise InsufficientSamples("need two samples for a variance")
        return self._m2 / (self.count - 1)

    @property
    def n_batches(self) -> int:
        return len(self._batches)

    def batch_means(self) -> np.ndarray:
        if self.n_batches < self.min_batches:
            raise InsufficientSamples(f"{self.n_batches} batches, need at least {self.min_batches}")
        return np.vstack(self._batches)

    def batch_mean(self) -> np.ndarray:
        """Mean over completed batches only (consistent with :meth:`se`)."""
        return self.batch_means().mean(axis=0)

    def se(self) -> np.ndarray:
        bm = self.batch_means()
        return bm.std(axis=0, ddof=1) / np.sqrt(len(bm))


def gelman_rubin(chains) -> float:
    """Potential scale reduction factor for equal-length scalar chains."""
    x = np.asarray(chains, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 2:
        raise ValueError("need at least two chains of length >= 2")
    m, n = x.shape
    means = x.mean(axis=1)
    W = x.var(axis=1, ddof=1).mean()
    B = n * means.var(ddof=1)
    var_plus = (n - 1) / n * W + B / n
    return float(np.sqrt(var_plus / W)) if W > 0 else float("nan")


# ------------------------------------------------------------------- driver
@dataclass
class RunResult:
    accumulators: dict
    acceptance: float
    width: float
    sweeps: int
    burn_in: int
    traces: dict = field(default_factory=dict)


def default_burn_in(n_sweeps: int) -> int:
    return max(int(0.2 * n_sweeps), 1000)


def run(
    chain: Chain,
    n_sweeps: int,
    observables: dict[str, Callable[[Chain], np.ndarray]],
    method: str = "heat_bath",
    burn_in: int | None = None,
    n_batches: int = MIN_BATCHES,
    thin: int = 1,
    tune: bool = True,
    trace: tuple = (),
) -> RunResult:
    """Burn in (tuning the proposal width for Metropolis), then record observables.

    ``n_sweeps`` counts measurement sweeps; burn-in sweeps come on top.
    """
    if method not in ("heat_bath", "metropolis"):
        raise ValueError("method must be 'heat_bath' or 'metropolis'")
    burn_in = default_burn_in(n_sweeps) if burn_in is None else int(burn_in)
    step = chain.heat_bath_sweep if method == "heat_bath" else chain.metropolis_sweep
    st = chain.state
    window = 50
    for i in range(burn_in):
        step()
        if method == "metropolis" and tune and (i + 1) % window == 0:
            acc = st.accepted / max(st.proposed, 1)
            st.width *= float(np.exp(acc - TARGET_ACCEPTANCE))
            st.accepted = st.proposed = 0
    st.accepted = st.proposed = 0

    n_samples = n_sweeps // thin
    batch = max(1, n_samples // n_batches)
    accs = {name: ObservableAccumulator(batch) for name in observables}
    traces = {name: [] for name in trace}
    for i in range(n_sweeps):
        step()
        if (i + 1) % thin == 0:
            for name, fn in observables.items():
                val = fn(chain)
                accs[name].add(val)
                if name in traces:
                    traces[name].append(np.asarray(val, dtype=float))
    acc_rate = st.acceptance if method == "metropolis" else 1.0
    if method == "metropolis":
        log.info("metropolis acceptance %.3f at width %.3f", acc_rate, st.width)
    return RunResult(accs, acc_rate, st.width, n_sweeps, burn_in, {k: np.array(v) for k, v in traces.items()})


# ------------------------------------------------------------ ward identity
@dataclass(frozen=True)
class WardResult:
    residual: np.ndarray
    se: np.ndarray
    summed: float
    summed_se: float
    boundary_flux: float

    def max_z(self) -> float:
        return float(np.max(np.abs(self.residual) / self.se))


def ward_residual(forces: ObservableAccumulator, chain: Chain) -> WardResult:
    """Per-site E[dH/dphi(x)] - lambda_xi xi(x) and the summed boundary form.

    Interior bond terms cancel in the site sum, so the summed residual equals
    -lambda_xi sum_x xi(x) + sum over boundary bonds of E V'(phi(x) - phi(y)).
    """
    bm = forces.batch_means()
    target = chain.field
    resid = bm.mean(axis=0) - target
    se = bm.std(axis=0, ddof=1) / np.sqrt(len(bm))
    total = bm.sum(axis=1)
    summed = float(total.mean() - target.sum())
    summed_se = float(total.std(ddof=1) / np.sqrt(len(total)))
    return WardResult(resid, se, summed, summed_se, float(total.mean()))
