"""Finite-volume surface tension, the subadditive block functional, and block averages."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import integrate, optimize, stats

from .disorder import SiteDisorderSpec, xi_at
from .gaussian_exact import QuadraticModel, assemble, log_partition
from .lattice import BoxRegion, Domain, block_partition, rectangle
from .sampler import Chain, PotentialSpec, run

GL_NODES = 8


class MethodMismatch(ValueError):
    """The requested estimator cannot handle the potential family."""


class DegenerateFit(ValueError):
    """Too few points, or no spread in N, for a scaling regression."""


class QuadratureFailure(RuntimeError):
    """Adaptive quadrature did not reach its error target."""


class ToleranceExceeded(RuntimeError):
    """A Monte Carlo error bar is above the requested tolerance."""


@dataclass(frozen=True)
class SurfaceTensionEstimate:
    value: float
    se: float
    method: str
    region: Domain = field(repr=False)
    u: tuple
    seed: int | None = None
    nodes: tuple = ()

    def __post_init__(self):
        if self.se < 0:
            raise ValueError("error bar must be nonnegative")


def _reference_log_partition(region, potential, xi_vals, u, lambda_xi) -> float:
    """log Z of the purely quadratic part of the potential."""
    k, _, _ = potential.bond_parameters(region)
    return log_partition(assemble(region, k, u, xi_vals, lambda_xi))


def sigma(
    region: Domain,
    potential: PotentialSpec,
    xi: SiteDisorderSpec | None = None,
    u=None,
    method: str = "exact_gaussian",
    lambda_xi: float = 1.0,
    nodes: int = GL_NODES,
    n_sweeps: int = 20_000,
    burn_in: int | None = None,
    seed: int = 0,
    tol: float | None = None,
) -> SurfaceTensionEstimate:
    """sigma_Lambda = -log Z / |Lambda| with tilted boundary heights.

    ``thermo_integration`` interpolates the cosine part: V_lam = k s^2 + lam * eps (cos s + c),
    so -log Z(V) = -log Z(k s^2) + int_0^1 <sum_b eps_b (cos s_b + c_b)>_lam dlam.
    """
    u = np.zeros(region.d) if u is None else np.asarray(u, dtype=float)
    xi_vals = None if xi is None else xi_at(xi, region.sites)
    tag = tuple(float(t) for t in u)
    xseed = None if xi is None else xi.seed
    if method == "exact_gaussian":
        if not potential.is_quadratic:
            raise MethodMismatch("exact evaluation needs a quadratic potential")
        logz = _reference_log_partition(region, potential, xi_vals, u, lambda_xi)
        return SurfaceTensionEstimate(-logz / region.n, 0.0, method, region, tag, xseed)
    if method != "thermo_integration":
        raise MethodMismatch(f"unknown method {method!r}")

    logz0 = _reference_log_partition(region, potential, xi_vals, u, lambda_xi)
    if potential.is_quadratic:
        return SurfaceTensionEstimate(-logz0 / region.n, 0.0, method, region, tag, xseed)
    x, w = np.polynomial.legendre.leggauss(nodes)
    lams = 0.5 * (x + 1.0)
    w = 0.5 * w
    means, ses = [], []
    for i, lam in enumerate(lams):
        chain = Chain(region, potential, u, xi_vals, lambda_xi, seed=seed * 1000 + i)
        chain.scale_perturbation(lam)
        obs = {"pert": lambda c: c.perturbation_energy()}
        res = run(chain, n_sweeps, obs, method="metropolis", burn_in=burn_in)
        acc = res.accumulators["pert"]
        means.append(float(acc.batch_mean()[0]))
        ses.append(float(acc.se()[0]))
    means, ses = np.asarray(means), np.asarray(ses)
    integral = float(w @ means)
    se = float(np.sqrt(np.sum((w * ses) ** 2))) / region.n
    value = (-logz0 + integral) / region.n
    if tol is not None and se > tol:
        raise ToleranceExceeded(f"surface tension error bar {se:.3g} above tolerance {tol:.3g}")
    return SurfaceTensionEstimate(value, se, method, region, tag, xseed, tuple(zip(lams.tolist(), means.tolist())))


# ------------------------------------------------------------------ scaling
@dataclass(frozen=True)
class ScalingFit:
    slope: float
    intercept: float
    r2: float
    t: float
    liminf: float
    limsup: float


def scaling_fit(Ns, sigmas) -> ScalingFit:
    """Regress sigma_N on N^2; report slope, R^2, slope t-statistic and the sigma/N^2 window."""
    Ns = np.asarray(Ns, dtype=float)
    sig = np.asarray(sigmas, dtype=float)
    if Ns.size < 5 or np.unique(Ns).size < 3:
        raise DegenerateFit("need at least five values of N")
    r = stats.linregress(Ns**2, sig)
    t = r.slope / r.stderr if r.stderr > 0 else float("inf") * np.sign(r.slope)
    ratio = sig / Ns**2
    tail = ratio[len(ratio) // 2 :]
    return ScalingFit(float(r.slope), float(r.intercept), float(r.rvalue**2), float(t), float(tail.min()), float(tail.max()))


# ------------------------------------------------------- subadditive functional
def f_functional(a, l_plus, model: QuadraticModel, u, C: float, V=None) -> float:
    """f over the rectangle [a, l_plus]; the partition function lives on [a, l_plus - 1].

    f = -log Z_{[a, l_plus - 1]} + sum_x (u.x) xi(x) + |[a, l_plus - 1]| (log C - sum_i V(u_i)/2).
    """
    a = np.asarray(a, dtype=np.int64)
    inner = rectangle(a, np.asarray(l_plus, dtype=np.int64) - 1)
    u = np.asarray(u, dtype=float)
    V = (lambda s: model.a * s * s) if V is None else V
    logz = log_partition(model.operator(inner, u))
    lin = 0.0
    if model.xi is not None:
        lin = model.lambda_xi * float((inner.sites @ u) @ xi_at(model.xi, inner.sites))
    g = inner.n * (np.log(C) - float(np.sum(V(u))) / 2)
    return -logz + lin + g


def _split_pieces(shape, lp):
    d = len(shape)
    a = np.zeros(d, dtype=np.int64)
    top = np.asarray(shape, dtype=np.int64)  # f-index corner l + 1
    left_hi = top.copy()
    left_hi[0] = lp
    right_lo = a.copy()
    right_lo[0] = lp + 1
    return a, top, left_hi, right_lo


def split_defects(shape, model: QuadraticModel, u) -> np.ndarray:
    """Per admissible split, the largest log C for which f_B <= f_L + f_R.

    ``shape`` is the side lengths of the partition-function box [0, shape - 1]; the
    split columns are 1 <= l1' <= shape[0] - 2.
    """
    shape = tuple(int(s) for s in shape)
    if shape[0] < 3:
        raise ValueError("need at least three columns to split")
    u = np.asarray(u, dtype=float)
    out = []
    for lp in range(1, shape[0] - 1):
        a, top, left_hi, right_lo = _split_pieces(shape, lp)
        fB = f_functional(a, top, model, u, 1.0)
        fL = f_functional(a, left_hi, model, u, 1.0)
        fR = f_functional(right_lo, top, model, u, 1.0)
        slab = int(np.prod(shape[1:]))
        # with C: f_B - f_L - f_R = D + slab * log C
        out.append(-(fB - fL - fR) / slab)
    return np.asarray(out)


def subadditivity_margins(shape, model: QuadraticModel, u, C: float) -> np.ndarray:
    """f_L + f_R - f_B for each admissible split (nonnegative means subadditive)."""
    slab = int(np.prod(shape[1:]))
    return slab * (split_defects(shape, model, u) - np.log(C))


def calibrate_C(shape, model: QuadraticModel, u, seeds, include_zero: bool | None = None) -> tuple[float, np.ndarray]:
    """Largest C with subadditivity at every split for every calibration seed.

    With site disorder only, the defect is the disorder-free defect plus a nonnegative
    quadratic form in xi, so xi = 0 is the worst case over all realisations.
    ``include_zero`` (default: on for site disorder) adds that configuration to the
    calibration set; the returned table holds the seeded rows only.
    """
    table = np.array([split_defects(shape, model.with_seed(s), u) for s in seeds])
    if include_zero is None:
        include_zero = model.bonds is None
    if include_zero and model.bonds is not None:
        raise ValueError("the zero-disorder worst case only holds for site disorder")
    log_c = table.min()
    if include_zero:
        log_c = min(log_c, split_defects(shape, replace(model, xi=None), u).min())
    return float(np.exp(log_c)), table


def decoupled_log_partition(shape, cut: int, model: QuadraticModel, u) -> float:
    """log Z on [0, shape - 1] with column ``cut`` frozen to the tilted plane.

    Freezing the column decouples the two sides, so this equals log Z_L + log Z_R plus
    the explicit weight of the bonds inside or touching the frozen column.
    """
    shape = tuple(int(s) for s in shape)
    mask = np.ones(shape, dtype=bool)
    mask[cut] = False
    dom = Domain(mask, np.zeros(len(shape), dtype=np.int64))
    u = np.asarray(u, dtype=float)
    logz = log_partition(model.operator(dom, u))
    full = rectangle(np.zeros(len(shape), dtype=np.int64), np.asarray(shape) - 1)
    lo, hi, axis = full.bonds()
    ext = full.ext_sites
    col = np.zeros(len(ext), dtype=bool)
    col[: full.n] = full.sites[:, 0] == cut
    touches_free = np.zeros(len(ext), dtype=bool)
    touches_free[: full.n] = full.sites[:, 0] != cut
    frozen_bonds = (col[lo] | col[hi]) & ~(touches_free[lo] | touches_free[hi])
    k = model.stiffness(full)
    k = np.broadcast_to(np.asarray(k, dtype=float), lo.shape)
    ub = u[axis[frozen_bonds]]
    logz -= float(np.sum(k[frozen_bonds] * ub**2))
    if model.xi is not None:
        sites = full.sites[full.sites[:, 0] == cut]
        logz += model.lambda_xi * float((sites @ u) @ xi_at(model.xi, sites))
    return logz


# ------------------------------------------------------------ block averages
@dataclass(frozen=True)
class BlockAverage:
    value: float
    n_blocks: int
    slab_fraction: float
    block_values: np.ndarray = field(repr=False)


def block_average_sigma(N: int, n: int, d: int, model: QuadraticModel, u=None) -> BlockAverage:
    """Mean of exact sigma over the cube blocks of [0, N]^d (slabs dropped)."""
    u_arr = np.zeros(d) if u is None else np.asarray(u, dtype=float)
    part = block_partition(N, n, d)
    vals = []
    for lo, hi in part.cubes:
        box = BoxRegion(lo, hi) if n > 1 else rectangle(lo, hi)
        vals.append(-log_partition(model.operator(box, u_arr)) / box.n)
    vals = np.asarray(vals)
    return BlockAverage(float(vals.mean()), len(vals), part.slab_fraction, vals)


# ------------------------------------------------------------- one-site bound
def one_site_ratio(potential: PotentialSpec, neighbor_heights, xi_x: float, gamma: float) -> float:
    """int exp(-1/2 sum_y V(h_y - p) + xi p) dp  /  exp(-1/2 sum_y V(h_y - gamma) + xi gamma)."""
    h = np.asarray(neighbor_heights, dtype=float)

    def g(p):
        return -0.5 * float(np.sum(potential.V(h - p))) + xi_x * p

    lo, hi = h.min() - 50.0, h.max() + 50.0
    # two-point bracket: Brent expands downhill, so the mode may lie outside [min h, max h]
    opt = optimize.minimize_scalar(lambda p: -g(p), bracket=(h.min() - 1.0, h.max() + 1.0))
    mode = float(opt.x)
    gmax = g(mode)
    val, err = integrate.quad(lambda p: np.exp(g(p) - gmax), lo + min(0.0, mode - h.min()), hi + max(0.0, mode - h.max()),
                              points=[mode], limit=500, epsabs=0.0, epsrel=1e-11)
    if not np.isfinite(val) or err > 1e-8 * max(val, 1e-300):
        raise QuadratureFailure(f"one-site integral error {err:.2e} for value {val:.3e}")
    return float(val * np.exp(gmax - g(gamma)))
