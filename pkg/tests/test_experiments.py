import itertools
import json

import numpy as np
import pytest
from scipy import integrate, stats

from randgrad import experiments as E
from randgrad import greens
from randgrad.disorder import SiteDisorderSpec, xi_at
from randgrad.lattice import BoxRegion, centered_box

SMALL = {
    "green": dict(N_max=4, n_nested=5),
    "green_sum": dict(N_max=8, fit_from=4),
    "slln": dict(N_list=(3, 4), n_seeds=5),
    "scaling": dict(N_list=(3, 4, 5, 6, 7), growth_N=(4, 6), growth_seeds=2, plateau_N=(3, 4, 5)),
    "tilt": dict(exact_N=2, exact_seeds=5, mcmc_N=2, mcmc_seeds=3, n_sweeps=200, sym_seeds=3),
    "tightness": dict(N_list=(2, 3), n_seeds=4),
    "fbound": dict(n_instances=4),
    "deloc": dict(N3=(4, 6), N4=(3, 4), N5=(2, 3)),
    "ward": dict(side=3, n_sweeps=1000, growth_N=(2,), growth_sweeps=300, compare_sweeps=600, compare_batches=20),
    "subadditivity": dict(n_calibrate=3, n_holdout=3),
    "shift_covariance": dict(N_list=(3, 4), n_seeds=2),
}


def test_every_scenario_has_a_small_config():
    assert set(SMALL) == set(E.SCENARIOS)


@pytest.mark.parametrize("name", sorted(SMALL))
def test_report_structure(name):
    rep = E.SCENARIOS[name](**SMALL[name])
    assert rep.scenario == name and rep.checks and rep.rows
    assert rep.wall_clock > 0
    header, *body = rep.csv_text().splitlines()
    assert header.split(",") == list(E.CSV_COLUMNS)
    assert len(body) == len(rep.rows)
    rec = json.loads(rep.to_json())
    assert rec["passed"] == rep.passed
    assert [c["name"] for c in rec["checks"]] == [c.name for c in rep.checks]
    assert "wall_clock" not in json.loads(rep.to_json(include_timing=False))


@pytest.mark.parametrize("name", sorted(SMALL))
def test_rerun_reproduces_csv(name):
    a = E.SCENARIOS[name](**SMALL[name])
    b = E.SCENARIOS[name](**SMALL[name])
    assert a.csv_text() == b.csv_text()
    assert E.report_hash(a) == E.report_hash(b)


def test_threads_do_not_change_results():
    a = E.run_slln(N_list=(3, 4), n_seeds=6, threads=1)
    b = E.run_slln(N_list=(3, 4), n_seeds=6, threads=3)
    assert a.csv_text() == b.csv_text()


def test_pmap_keeps_order():
    assert E.pmap(lambda x: x * x, range(20), threads=4) == [x * x for x in range(20)]


def test_seed_list_is_stable_and_distinct():
    s = E._seed_list(0, 50)
    assert s == E._seed_list(0, 50)
    assert len(set(s)) == 50
    assert E._seed_list(0, 10, offset=5) == E._seed_list(0, 15)[5:]


def test_zero_disorder_slln_statistic_vanishes():
    box = centered_box(3, 3)
    spec = SiteDisorderSpec("rademacher_shifted", mean=0.0)
    # E xi = 0 and E xi^2 = 1: the expectation is the trace of G
    assert E.expected_quad_form(box, spec) == pytest.approx(greens.green_trace(box))


def test_expected_quad_form_by_enumeration():
    # d = 1, three sites, xi = m +- 1: average over all 8 sign patterns
    box = BoxRegion([0], [2])
    m = 0.7
    spec = SiteDisorderSpec("rademacher_shifted", mean=m)
    vals = [greens.quad_form(box, m + np.array(signs)) for signs in itertools.product((-1.0, 1.0), repeat=3)]
    assert E.expected_quad_form(box, spec) == pytest.approx(np.mean(vals), rel=1e-12)


@pytest.mark.parametrize("m,s", [(0.0, 1.0), (0.8, 0.3), (-2.0, 1.5), (0.1, 1e-6)])
def test_clip_mean(m, s):
    want, _ = integrate.quad(lambda x: np.clip(x, -1, 1) * stats.norm.pdf(x, m, s), m - 12 * s, m + 12 * s, points=[-1, 1], limit=200)
    assert E._clip_mean(m, s) == pytest.approx(want, abs=1e-9)


def test_shift_covariance_zero_shift():
    box = centered_box(3, 2)
    spec = SiteDisorderSpec(seed=4)
    origin = np.zeros(2, dtype=np.int64)
    a = E.averaged_clip_expectation(box, spec, 0.5, [0.3, -0.2], origin)
    b = E.averaged_clip_expectation(box, spec.shifted([0, 0]), 0.5, [0.3, -0.2], origin)
    assert a == b
    assert abs(a) <= 1


def _dense_clip_oracle(N, spec, a, u, bond_lo, axis):
    """Per-shift dense Gaussian with the boundary held at u.x outside [-N, N]^2."""
    sites = [np.array(p) for p in itertools.product(range(-N, N + 1), repeat=2)]
    idx = {tuple(p): k for k, p in enumerate(sites)}
    n = len(sites)
    u = np.asarray(u, float)
    L = np.zeros((n, n))
    bnd = np.zeros(n)
    for k, p in enumerate(sites):
        for step in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            q = tuple(p + step)
            L[k, k] += 1
            if q in idx:
                L[k, idx[q]] -= 1
            else:
                bnd[k] += u @ np.array(q)
    Q = 2 * a * L
    cov = np.linalg.inv(Q)
    e = np.eye(2, dtype=int)[axis]
    total = 0.0
    for x in sites:
        xi = np.array([xi_at(spec, (p + x)[None, :])[0] for p in sites])
        mean = cov @ (xi + 2 * a * bnd)
        t = np.asarray(bond_lo) - x
        ends = [t, t + e]
        g = np.zeros(n)
        m = 0.0
        for sign, y in zip((-1, 1), ends):
            if tuple(y) in idx:
                g[idx[tuple(y)]] += sign
                m += sign * mean[idx[tuple(y)]]
            else:
                m += sign * (u @ y)
        sd = float(np.sqrt(g @ cov @ g))
        if sd == 0:
            total += float(np.clip(m, -1, 1))
        else:
            val, _ = integrate.quad(lambda z: np.clip(z, -1, 1) * stats.norm.pdf(z, m, sd), m - 12 * sd, m + 12 * sd,
                                    points=[-1, 1], limit=200)
            total += val
    return total / n


@pytest.mark.parametrize("v", [(1, 0), (0, 1), (2, 1)])
def test_averaged_clip_expectation_matches_dense_oracle(v):
    N, a, u = 2, 0.5, [0.3, -0.2]
    spec = SiteDisorderSpec(seed=7)
    bond_lo = -np.asarray(v)
    got = E.averaged_clip_expectation(centered_box(N, 2), spec, a, u, bond_lo)
    assert got == pytest.approx(_dense_clip_oracle(N, spec, a, u, bond_lo, 0), abs=1e-8)


def test_slln_requires_d3():
    with pytest.raises(ValueError):
        E.run_slln(d=2)


def test_site_spec():
    assert E.site_spec("uniform", 1, 2.0).expectation == 2.0
    with pytest.raises(ValueError):
        E.site_spec("poisson", 0)


def test_summary_marks_failures():
    rep = E.ScenarioReport("x", {})
    rep.check("good", True, 1.0, hi=2.0)
    rep.check("bad", False, 3.0, hi=2.0)
    text = rep.summary()
    assert "FAIL" in text.splitlines()[0]
    assert "[FAIL] bad" in text and "[ok] good" in text
    assert rep.failed() == ["bad"]
