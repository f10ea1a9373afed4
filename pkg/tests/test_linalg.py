import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from randgrad.lattice import centered_box
from randgrad.linalg import FactorizationFailure, SolverFailure, SPDSolver, dense_logdet, pcg


@pytest.fixture
def lap():
    return centered_box(3, 2).laplacian().tocsr()


def test_pcg_matches_direct_solve(lap, rng):
    b = rng.standard_normal((lap.shape[0], 3))
    x = pcg(lap, b)
    np.testing.assert_allclose(x, spla.spsolve(lap.tocsc(), b), rtol=0, atol=1e-10)
    np.testing.assert_allclose(pcg(lap, b[:, 0]), x[:, 0], atol=1e-12)


def test_pcg_zero_rhs(lap):
    np.testing.assert_array_equal(pcg(lap, np.zeros(lap.shape[0])), 0.0)


def test_pcg_reports_stall(lap, rng):
    with pytest.raises(SolverFailure):
        pcg(lap, rng.standard_normal(lap.shape[0]), maxiter=2)


@pytest.mark.parametrize("method", ["direct", "iterative"])
def test_spd_solver(lap, rng, method):
    s = SPDSolver(lap, method)
    b = rng.standard_normal(lap.shape[0])
    np.testing.assert_allclose(lap @ s.solve(b), b, atol=1e-10)
    assert s.logdet() == pytest.approx(dense_logdet(lap), rel=1e-12)


def test_default_method_switches_on_size():
    assert SPDSolver(sp.identity(10)).method == "direct"
    assert SPDSolver(sp.identity(40_000)).method == "iterative"
    with pytest.raises(ValueError):
        SPDSolver(sp.identity(3), "qr")


def test_indefinite_matrix_rejected():
    A = sp.csc_matrix(np.array([[1.0, 0.0], [0.0, -1.0]]))
    with pytest.raises(FactorizationFailure):
        SPDSolver(A).logdet()
    with pytest.raises(FactorizationFailure):
        dense_logdet(A)


def test_dense_logdet(rng):
    M = rng.standard_normal((6, 6))
    A = M @ M.T + 6 * np.eye(6)
    assert dense_logdet(A) == pytest.approx(np.linalg.slogdet(A)[1], rel=1e-12)
