"""Sparse SPD solves: direct LU factorisation for moderate sizes, Jacobi-preconditioned CG beyond."""

from __future__ import annotations

import logging

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)

DIRECT_MAX = 30_000
CG_RTOL = 1e-12
CG_MAXITER = 100_000


class SolverFailure(RuntimeError):
    """An iterative solve did not reach its tolerance."""


class FactorizationFailure(RuntimeError):
    """A matrix that should be SPD could not be factorised as such."""


def pcg(A, b, diag=None, rtol: float = CG_RTOL, maxiter: int = CG_MAXITER, x0=None) -> np.ndarray:
    """Conjugate gradients with a diagonal preconditioner; columns of ``b`` solved jointly."""
    b = np.asarray(b, dtype=float)
    single = b.ndim == 1
    B = b[:, None] if single else b
    inv_diag = 1.0 / (A.diagonal() if diag is None else np.asarray(diag))[:, None]
    X = np.zeros_like(B) if x0 is None else np.array(x0, dtype=float).reshape(B.shape)
    R = B - A @ X
    bnorm = np.linalg.norm(B, axis=0)
    bnorm[bnorm == 0] = 1.0
    Z = inv_diag * R
    P = Z.copy()
    rz = np.einsum("ij,ij->j", R, Z)
    for it in range(maxiter):
        if np.all(np.linalg.norm(R, axis=0) <= rtol * bnorm):
            break
        AP = A @ P
        pAp = np.einsum("ij,ij->j", P, AP)
        alpha = np.divide(rz, pAp, out=np.zeros_like(rz), where=pAp != 0)
        X += alpha * P
        R -= alpha * AP
        Z = inv_diag * R
        rz_new = np.einsum("ij,ij->j", R, Z)
        beta = np.divide(rz_new, rz, out=np.zeros_like(rz), where=rz != 0)
        P = Z + beta * P
        rz = rz_new
    else:
        worst = float(np.max(np.linalg.norm(R, axis=0) / bnorm))
        raise SolverFailure(f"CG stalled after {maxiter} iterations, relative residual {worst:.3e}")
    log.debug("pcg converged in %d iterations (n=%d)", it, A.shape[0])
    return X[:, 0] if single else X


class SPDSolver:
    """Reusable solver for a fixed sparse symmetric positive definite matrix."""

    def __init__(self, A, method: str | None = None):
        self.A = sp.csc_matrix(A)
        n = self.A.shape[0]
        if method is None:
            method = "direct" if n <= DIRECT_MAX else "iterative"
        if method not in ("direct", "iterative"):
            raise ValueError(f"unknown method {method!r}")
        self.method = method
        self._lu = None
        if method == "direct":
            try:
                self._lu = spla.splu(
                    self.A,
                    permc_spec="MMD_AT_PLUS_A",
                    diag_pivot_thresh=0.0,
                    options={"SymmetricMode": True},
                )
            except RuntimeError as exc:
                raise FactorizationFailure(str(exc)) from exc
            self._A_csr = None
        else:
            self._A_csr = sp.csr_matrix(A)

    def solve(self, b) -> np.ndarray:
        if self._lu is not None:
            return self._lu.solve(np.asarray(b, dtype=float))
        return pcg(self._A_csr, b)

    def logdet(self) -> float:
        if self._lu is None:
            self._lu = spla.splu(
                self.A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0, options={"SymmetricMode": True}
            )
        diag = self._lu.U.diagonal()
        if np.any(diag <= 0):
            raise FactorizationFailure("nonpositive pivot: matrix is not positive definite")
        return float(np.sum(np.log(diag)))


def dense_logdet(A) -> float:
    """Cholesky-based log-determinant of a (small) dense SPD matrix."""
    A = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise FactorizationFailure(str(exc)) from exc
    return float(2.0 * np.sum(np.log(np.diag(L))))
