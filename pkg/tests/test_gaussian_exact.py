import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from randgrad import greens
from randgrad.disorder import BondDisorderSpec, SiteDisorderSpec, xi_at
from randgrad.gaussian_exact import (
    BetaTooLarge,
    NonPositiveWeight,
    QuadraticModel,
    assemble,
    augment,
    averaged_gradient_mean,
    bond_conductances,
    deloc_sums,
    f_beta,
    f_beta_bound,
    log_partition,
    quenched_mean,
    solve,
    surface_tension_exact,
)
from randgrad.lattice import BoxRegion, centered_box, rectangle

floats = st.floats(-2, 2, allow_nan=False)


def test_single_site_log_partition_by_quadrature():
    # one site at 0 with boundary heights -u, u and V(s) = a s^2
    region = rectangle([0], [0])
    a, u, xi = 0.7, 0.4, 0.3
    op = assemble(region, a, [u], np.array([xi]))
    weight = lambda p: np.exp(-a * (p + u) ** 2 - a * (u - p) ** 2 + xi * p)
    val, _ = integrate.quad(weight, -np.inf, np.inf, epsabs=0, epsrel=1e-13)
    assert log_partition(op) == pytest.approx(np.log(val), abs=1e-12)


def test_two_sites_log_partition_by_quadrature():
    region = rectangle([0], [1])
    k = np.array([0.5, 0.9, 1.3])  # bonds (0,1), (1,2), (-1,0) in region.bonds() order
    lo, hi, _ = region.bonds()
    psi = np.array([0.2, -0.1])  # boundary sites -1 and 2
    xi = np.array([0.4, -0.6])
    op = assemble(region, k, xi=xi, boundary_values=psi)

    def weight(p1, p0):
        h = np.concatenate([[p0, p1], psi])
        s = h[hi] - h[lo]
        return np.exp(-np.sum(k * s * s) + xi @ [p0, p1])

    val, _ = integrate.dblquad(weight, -12, 12, -12, 12, epsabs=0, epsrel=1e-11)
    assert log_partition(op) == pytest.approx(np.log(val), abs=1e-9)


@given(st.lists(floats, min_size=9, max_size=9))
def test_mean_is_green_times_xi(xi):
    # V = s^2 / 2, zero boundary: m = G_walk xi / (2d)
    box = centered_box(1, 2)
    xi = np.asarray(xi)
    m = quenched_mean(assemble(box, 0.5, None, xi))
    g = greens.operator_for(box).solve_walk(xi) / (2 * box.d)
    np.testing.assert_allclose(m, g, atol=1e-10)


@given(st.lists(floats, min_size=8, max_size=8), st.floats(0.2, 3.0))
def test_disorder_contribution_is_quadratic_form(xi, a):
    # log Z(xi) - log Z(0) = <xi, G_lap xi> / (4a)
    box = BoxRegion([0, 0], [1, 3])
    xi = np.asarray(xi)
    u = np.array([0.3, -0.2])
    diff = log_partition(assemble(box, a, u, xi)) - log_partition(assemble(box, a, u))
    lin = float(xi @ (box.sites @ u))
    q = greens.quad_form(box, xi, normalization="laplacian")
    assert diff == pytest.approx(lin + q / (4 * a), abs=1e-9)


def test_tilted_plane_is_the_mean_without_disorder():
    box = centered_box(3, 3)
    u = np.array([0.5, -0.25, 1.0])
    sol = solve(assemble(box, 1.3, u))
    np.testing.assert_allclose(sol.mean, box.sites @ u, atol=1e-10)
    _, _, axis = box.bonds()
    np.testing.assert_allclose(sol.bond_means(), u[axis], atol=1e-10)


def test_bond_variances_match_dense_covariance():
    box = centered_box(2, 2)
    op = assemble(box, 0.8, [0.1, 0.2], SiteDisorderSpec(seed=3))
    sol = solve(op)
    cov = np.linalg.inv(op.Q.toarray())
    DI = op.D[:, : box.n].toarray()
    rows = np.arange(0, len(DI), 3)
    np.testing.assert_allclose(sol.bond_variances(rows), np.einsum("ij,jk,ik->i", DI[rows], cov, DI[rows]), atol=1e-12)
    x, y = [0, 0], [0, 1]
    row, sign = op.bond_index(x, y)
    assert sign == 1.0
    assert sol.gradient_mean(y, x) == -sol.gradient_mean(x, y)
    m2 = sol.gradient_second_moment(x, y, center=0.2)
    assert m2 == pytest.approx(sol.bond_variances([row])[0] + (sol.gradient_mean(x, y) - 0.2) ** 2)
    with pytest.raises(KeyError):
        op.bond_index([5, 5], [5, 6])


def test_model_b_log_partition_dense():
    box = centered_box(2, 2)
    spec = BondDisorderSpec(1.0, 2.0, seed=9)
    k = bond_conductances(box, spec)
    u = np.array([0.3, -0.2])
    op = assemble(box, k, u)
    D = op.D.toarray()
    n = box.n
    psi = box.boundary_sites @ u
    Q = 2 * D[:, :n].T @ np.diag(k) @ D[:, :n]
    sB = D[:, n:] @ psi
    b = -2 * D[:, :n].T @ (k * sB)
    expected = 0.5 * n * np.log(2 * np.pi) - 0.5 * np.linalg.slogdet(Q)[1] + 0.5 * b @ np.linalg.solve(Q, b) - k @ sB**2
    assert log_partition(op) == pytest.approx(expected, abs=1e-9)
    assert surface_tension_exact(op) == pytest.approx(-expected / n, abs=1e-12)


def _f_beta_dense(op, beta, u):
    """log E exp(beta * sum_b (s_b - u_b)^2) from the Gaussian moment generating function."""
    n = op.n
    D = op.D.toarray()
    _, _, axis = op.region.bonds()
    cov = np.linalg.inv(op.Q.toarray())
    m = np.linalg.solve(op.Q.toarray(), op.b)
    mu = D[:, :n] @ m + D[:, n:] @ op.boundary_values - np.asarray(u)[axis]
    S = D[:, :n] @ cov @ D[:, :n].T
    M = np.eye(len(S)) - 2 * beta * S
    return -0.5 * np.linalg.slogdet(M)[1] + beta * mu @ np.linalg.solve(M, mu)


@given(st.floats(0.01, 0.4), st.lists(floats, min_size=2, max_size=2), st.integers(0, 10_000))
def test_f_beta_matches_moment_generating_function(beta, u, seed):
    box = centered_box(2, 2)
    op = assemble(box, 0.5, u, SiteDisorderSpec(seed=seed))
    assert f_beta(op, beta) == pytest.approx(_f_beta_dense(op, beta, u), abs=1e-8)


@given(st.floats(0.01, 0.45), st.lists(floats, min_size=2, max_size=2), st.integers(0, 10_000))
def test_f_beta_upper_bound(beta, u, seed):
    box = centered_box(3, 2)
    xi = xi_at(SiteDisorderSpec(seed=seed), box.sites)
    F = f_beta(assemble(box, 0.5, u, xi), beta)
    F_bar, alpha = f_beta_bound(box, beta, u, 0.5, 0.0, 1.0)
    q = greens.quad_form(box, xi, normalization="laplacian")
    assert F <= F_bar + 0.5 * alpha * q + 1e-8


def test_f_beta_guards():
    op = assemble(centered_box(1, 2), 0.5, [0.0, 0.0])
    assert f_beta(op, 0.0) == 0.0
    with pytest.raises(BetaTooLarge):
        augment(op, 0.5)
    with pytest.raises(ValueError):
        augment(op, -0.1)
    with pytest.raises(BetaTooLarge):
        f_beta_bound(op.region, 0.6, [0, 0], 0.5, 0, 1)


def test_assemble_validation():
    box = centered_box(1, 2)
    with pytest.raises(NonPositiveWeight):
        assemble(box, 0.0)
    with pytest.raises(ValueError):
        assemble(box, 1.0, [0.1])
    with pytest.raises(ValueError):
        assemble(box, 1.0, xi=np.zeros(3))
    with pytest.raises(NonPositiveWeight):
        QuadraticModel(a=-1.0)
    with pytest.raises(ValueError):
        QuadraticModel(bonds=BondDisorderSpec(eps_max=0.1))


def _literal_average(model, region, u):
    """Average over x of E_{region + x}[eta(0, e_k)], one solve per shifted volume."""
    d = region.d
    out = np.zeros(d)
    for x in region.sites:
        shifted = region.translate(x)
        sol = solve(model.operator(shifted, u))
        for k in range(d):
            e = np.zeros(d, dtype=int)
            e[k] = 1
            out[k] += sol.gradient_mean(np.zeros(d, dtype=int), e)
    return out / region.n


@pytest.mark.parametrize(
    "model",
    [
        QuadraticModel(0.5, xi=SiteDisorderSpec(seed=4)),
        QuadraticModel(bonds=BondDisorderSpec(1.0, 2.0, seed=4)),
    ],
    ids=["site", "bond"],
)
def test_averaged_gradient_mean_matches_literal_average(model):
    box = centered_box(2, 2)
    u = np.array([0.3, -0.2])
    np.testing.assert_allclose(averaged_gradient_mean(model, box, u), _literal_average(model, box, u), atol=1e-10)


def test_averaged_gradient_mean_without_disorder_is_the_tilt():
    u = np.array([0.4, 0.1, -0.3])
    np.testing.assert_allclose(averaged_gradient_mean(QuadraticModel(0.5), centered_box(2, 3), u), u, atol=1e-10)


def test_deloc_sums_dense():
    box = centered_box(3, 3)
    G = np.linalg.inv(box.laplacian().toarray())
    i0, i1 = box.index(np.array([[0, 0, 0], [1, 0, 0]]))
    site, bond = deloc_sums(3, 3)
    assert site == pytest.approx(np.sum(G[i0] ** 2), rel=1e-10)
    assert bond == pytest.approx(np.sum((G[i0] - G[i1]) ** 2), rel=1e-10)
    it = deloc_sums(3, 3, method="iterative")
    assert it == pytest.approx((site, bond), rel=1e-9)
    with pytest.raises(ValueError):
        deloc_sums(2, 3)


def test_model_seed_handling():
    m = QuadraticModel(0.5, xi=SiteDisorderSpec(seed=1))
    assert m.with_seed(5).xi.seed == 5
    assert QuadraticModel(0.5).with_seed(5).xi is None
