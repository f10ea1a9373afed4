import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from randgrad.disorder import BondDisorderSpec, SiteDisorderSpec, xi_at
from randgrad.gaussian_exact import QuadraticModel, assemble, log_partition
from randgrad.lattice import BoxRegion, centered_box, rectangle
from randgrad.sampler import PotentialSpec
from randgrad.surface import (
    DegenerateFit,
    MethodMismatch,
    ToleranceExceeded,
    block_average_sigma,
    calibrate_C,
    decoupled_log_partition,
    f_functional,
    one_site_ratio,
    scaling_fit,
    sigma,
    split_defects,
    subadditivity_margins,
)


def test_exact_sigma():
    box = centered_box(3, 2)
    xi = SiteDisorderSpec(seed=2)
    est = sigma(box, PotentialSpec(a=0.5), xi, [0.3, 0.1])
    assert est.value == pytest.approx(-log_partition(assemble(box, 0.5, [0.3, 0.1], xi)) / box.n)
    assert est.se == 0 and est.seed == 2
    with pytest.raises(MethodMismatch):
        sigma(box, PotentialSpec("quadratic_cosine", 0.5, 0.2))
    with pytest.raises(MethodMismatch):
        sigma(box, PotentialSpec(), method="umbrella")


def test_thermo_integration_reduces_to_exact_for_quadratic():
    box = centered_box(2, 2)
    a = sigma(box, PotentialSpec(a=0.5), u=[0.2, 0.0])
    b = sigma(box, PotentialSpec(a=0.5), u=[0.2, 0.0], method="thermo_integration")
    assert a.value == b.value


def test_thermo_integration_single_site_by_quadrature():
    region = rectangle([0], [0])
    a, eps, u = 0.5, 0.8, 0.7
    pot = PotentialSpec("quadratic_cosine", a, eps)
    est = sigma(region, pot, u=[u], method="thermo_integration", n_sweeps=40_000, seed=3)
    V = lambda s: a * s * s + eps * np.cos(s)
    val, _ = integrate.quad(lambda p: np.exp(-V(p + u) - V(u - p)), -np.inf, np.inf, epsrel=1e-12)
    assert abs(est.value + np.log(val)) < 5 * est.se + 1e-3
    assert len(est.nodes) == 8
    with pytest.raises(ToleranceExceeded):
        sigma(region, pot, u=[u], method="thermo_integration", n_sweeps=2000, tol=1e-9)


def test_scaling_fit_on_exact_parabola():
    Ns = np.arange(4, 12)
    fit = scaling_fit(Ns, 0.3 - 0.02 * Ns**2)
    assert fit.slope == pytest.approx(-0.02)
    assert fit.r2 == pytest.approx(1.0)
    with pytest.raises(DegenerateFit):
        scaling_fit([1, 2, 3], [0, 0, 0])


def test_f_functional_definition():
    model = QuadraticModel(0.5, xi=SiteDisorderSpec(seed=1))
    u = np.array([0.3])
    inner = BoxRegion([0], [4])
    f = f_functional([0], [5], model, u, C=2.0)
    lin = float((inner.sites @ u) @ xi_at(model.xi, inner.sites))
    V_u = 0.5 * 0.3**2
    expected = -log_partition(model.operator(inner, u)) + lin + inner.n * (np.log(2.0) - V_u / 2)
    assert f == pytest.approx(expected)


def test_margins_and_defects_agree():
    model = QuadraticModel(0.5, xi=SiteDisorderSpec(seed=3))
    defects = split_defects((6, 2), model, [0.3, -0.2])
    margins = subadditivity_margins((6, 2), model, [0.3, -0.2], C=np.exp(defects.min()))
    assert len(defects) == 4
    assert margins.min() == pytest.approx(0.0, abs=1e-10)
    with pytest.raises(ValueError):
        split_defects((2, 2), model, [0, 0])


@given(st.integers(0, 2**31))
def test_zero_disorder_is_the_worst_split(seed):
    u = [0.3, -0.2]
    zero = split_defects((6, 2), QuadraticModel(0.5), u)
    seeded = split_defects((6, 2), QuadraticModel(0.5, xi=SiteDisorderSpec(seed=seed)), u)
    assert np.all(seeded >= zero - 1e-10)


def test_calibration():
    model = QuadraticModel(0.5, xi=SiteDisorderSpec())
    C, table = calibrate_C((12,), model, [0.3], range(5))
    zero = split_defects((12,), QuadraticModel(0.5), [0.3]).min()
    assert np.log(C) == pytest.approx(zero)
    C_raw, _ = calibrate_C((12,), model, [0.3], range(5), include_zero=False)
    assert np.log(C_raw) == pytest.approx(table.min()) and C_raw >= C
    with pytest.raises(ValueError):
        calibrate_C((6, 2), QuadraticModel(bonds=BondDisorderSpec()), [0, 0], range(2), include_zero=True)


def test_decoupled_partition_splits_at_zero_tilt():
    model = QuadraticModel(0.5, xi=SiteDisorderSpec(seed=6))
    u = [0.0, 0.0]
    left = model.operator(rectangle([0, 0], [2, 1]), u)
    right = model.operator(rectangle([4, 0], [5, 1]), u)
    assert decoupled_log_partition((6, 2), 3, model, u) == pytest.approx(log_partition(left) + log_partition(right))


def test_block_average():
    model = QuadraticModel(0.5)
    whole = block_average_sigma(3, 4, 2, model)
    assert whole.n_blocks == 1 and whole.slab_fraction == 0
    assert whole.value == pytest.approx(-log_partition(model.operator(BoxRegion([0, 0], [3, 3]), [0, 0])) / 16)
    parts = block_average_sigma(7, 3, 2, model)
    assert parts.n_blocks == 4
    # disorder-free, translation-invariant blocks all agree
    np.testing.assert_allclose(parts.block_values, parts.block_values[0])


@given(st.lists(st.floats(-2, 2), min_size=4, max_size=4), st.floats(-1, 1), st.floats(-2, 2))
def test_one_site_ratio_gaussian_closed_form(h, xi, gamma):
    a = 0.5
    h = np.asarray(h)
    pot = PotentialSpec(a=a)
    g = lambda p: -0.5 * np.sum(a * (h - p) ** 2) + xi * p
    m = len(h)
    mode = (a * h.sum() + xi) / (a * m)
    expected = np.sqrt(2 * np.pi / (a * m)) * np.exp(g(mode) - g(gamma))
    assert one_site_ratio(pot, h, xi, gamma) == pytest.approx(expected, rel=1e-8)
