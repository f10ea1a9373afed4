import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from randgrad import greens
from randgrad.lattice import BoxRegion, ball, centered_box

shapes = st.lists(st.integers(2, 5), min_size=1, max_size=3)


def dense_walk_green(region):
    """(I - P)^{-1} built entry by entry from the neighbour table."""
    n = region.n
    P = np.zeros((n, n))
    for x in range(n):
        for y in region.neighbors[x]:
            if y < n:
                P[x, y] += 1.0 / (2 * region.d)
    return np.linalg.inv(np.eye(n) - P)


def test_interval_values_frozen():
    # G on {1, 2, 3}: closed form for the killed walk on a path
    col = greens.green_column(BoxRegion([1], [3]), [1])
    np.testing.assert_allclose(col.values, [1.5, 1.0, 0.5], atol=1e-12)
    np.testing.assert_allclose(greens.exit_times(BoxRegion([1], [3])), [3.0, 4.0, 3.0], atol=1e-12)
    assert greens.sum_all_green(1, 1) == pytest.approx(10.0, abs=1e-12)


@given(shapes)
def test_matches_dense_oracle(shape):
    box = BoxRegion(np.zeros(len(shape), dtype=int), np.asarray(shape) - 1)
    G = dense_walk_green(box)
    op = greens.operator_for(box)
    np.testing.assert_allclose(op.solve_walk(np.eye(box.n)).reshape(box.n, box.n), G, atol=1e-10)
    np.testing.assert_allclose(greens.exit_times(box), G.sum(axis=1), atol=1e-10)


@given(shapes, st.data())
def test_symmetric_and_positive(shape, data):
    box = BoxRegion(np.zeros(len(shape), dtype=int), np.asarray(shape) - 1)
    i = data.draw(st.integers(0, box.n - 1))
    j = data.draw(st.integers(0, box.n - 1))
    gi = greens.green_column(box, box.sites[i])
    gj = greens.green_column(box, box.sites[j])
    assert gi.at(box.sites[j]) == pytest.approx(gj.at(box.sites[i]), abs=1e-12)
    assert np.all(gi.values > 0)
    assert gi.values[i] >= 1.0


@given(st.integers(1, 3), st.data())
def test_domain_monotonicity(d, data):
    lo = np.asarray(data.draw(st.lists(st.integers(-2, 0), min_size=d, max_size=d)))
    hi = lo + np.asarray(data.draw(st.lists(st.integers(1, 3), min_size=d, max_size=d)))
    grow_lo = np.asarray(data.draw(st.lists(st.integers(0, 2), min_size=d, max_size=d)))
    grow_hi = np.asarray(data.draw(st.lists(st.integers(0, 2), min_size=d, max_size=d)))
    small, big = BoxRegion(lo, hi), BoxRegion(lo - grow_lo, hi + grow_hi)
    x = small.sites[data.draw(st.integers(0, small.n - 1))]
    gs = greens.green_column(small, x)
    gb = greens.green_column(big, x)
    for y in small.sites:
        assert gs.at(y) <= gb.at(y) + 1e-12
    xi = np.asarray(data.draw(st.lists(st.floats(-3, 3), min_size=small.n, max_size=small.n)))
    xi_big = np.zeros(big.n)
    xi_big[big.index(small.sites)] = xi
    assert greens.quad_form(small, xi) <= greens.quad_form(big, xi_big) + 1e-9


def test_outside_column_is_zero():
    box = centered_box(2, 2)
    col = greens.green_column(box, [0, 0])
    assert col.at([5, 5]) == 0.0
    with pytest.raises(ValueError):
        greens.green_column(box, [3, 0])


def test_normalisations():
    box = centered_box(2, 3)
    walk = greens.green_column(box, [0, 0, 0])
    lap = greens.green_column(box, [0, 0, 0], normalization="laplacian")
    np.testing.assert_allclose(walk.values, 6 * lap.values, rtol=1e-14)
    np.testing.assert_allclose(lap.to("walk").values, walk.values, rtol=1e-14)
    xi = np.linspace(-1, 1, box.n)
    assert greens.quad_form(box, xi) == pytest.approx(6 * greens.quad_form(box, xi, normalization="laplacian"))


def test_quad_form_edge_cases():
    box = centered_box(2, 2)
    assert greens.quad_form(box, np.zeros(box.n)) == 0.0
    with pytest.raises(ValueError):
        greens.quad_form(box, np.zeros(3))


def test_iterative_matches_direct():
    box = centered_box(4, 3)
    xi = np.cos(np.arange(box.n))
    a = greens.quad_form(box, xi, method="direct")
    b = greens.quad_form(box, xi, method="iterative")
    assert a == pytest.approx(b, rel=1e-10)


@given(shapes)
def test_trace_from_spectrum(shape):
    box = BoxRegion(np.zeros(len(shape), dtype=int), np.asarray(shape) - 1)
    G = dense_walk_green(box)
    assert greens.green_trace(box) == pytest.approx(np.trace(G), rel=1e-10)
    assert greens.green_trace(box, "laplacian") == pytest.approx(np.trace(G) / (2 * box.d), rel=1e-10)


def test_trace_non_box():
    B = ball(3, 2)
    assert greens.green_trace(B) == pytest.approx(np.trace(dense_walk_green(B)), rel=1e-10)


@pytest.mark.parametrize("d", [1, 2, 3])
@pytest.mark.parametrize("N", [1, 2, 5, 8])
def test_exit_time_sandwich(N, d):
    lower, exact, upper = greens.exit_time_sandwich(N, d)
    assert np.all(lower <= exact + 1e-9)
    assert np.all(exact <= upper + 1e-9)


def test_d1_exit_time_saturates_lower_bound():
    # on {-N+1..N-1} the walk exits in exactly N^2 - x^2 steps on average
    lower, exact, _ = greens.exit_time_sandwich(6, 1)
    np.testing.assert_allclose(exact, lower, atol=1e-9)


def test_green_sum_bounds_hold_d3():
    for N in range(1, 9):
        lo, hi = greens.green_sum_bounds(N, 3)
        assert lo <= greens.sum_all_green(N, 3) <= hi


def test_far_field_constant():
    assert greens.far_field_constant(3) == pytest.approx(3 / (2 * np.pi))
    assert greens.unit_ball_volume(2) == pytest.approx(np.pi)
    with pytest.raises(ValueError):
        greens.far_field_constant(2)
