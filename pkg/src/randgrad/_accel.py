"""Single-site MCMC kernels, compiled with numba when available.

Set ``RANDGRAD_NUMBA=0`` to force the pure-numpy implementations.  Both paths consume
the same pre-drawn normals and uniforms, so they produce the same trajectories up to
floating-point summation order.

Sites are visited in ``order``; ``starts`` splits the order into blocks of mutually
non-adjacent sites.  The compiled kernels simply walk the order; the numpy kernels update
one block at a time in vectorised form.

Bond potential on the bond to neighbour j: V(s) = k_j s^2 + e_j cos(s).
"""

from __future__ import annotations

import os

import numpy as np

_requested = os.environ.get("RANDGRAD_NUMBA", "1").strip().lower() not in ("0", "false", "no", "off")

try:
    if not _requested:
        raise ImportError
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False


# ----------------------------------------------------------------------- numpy
def heat_bath_numpy(phi, nbr, k, xi, order, starts, normals):
    for b in range(len(starts) - 1):
        s = order[starts[b] : starts[b + 1]]
        kk = k[s]
        prec = 2.0 * kk.sum(axis=1)
        mean = (2.0 * (kk * phi[nbr[s]]).sum(axis=1) + xi[s]) / prec
        phi[s] = mean + normals[starts[b] : starts[b + 1]] / np.sqrt(prec)


def _local_energy_numpy(h, nb_h, kk, ee, xi):
    diff = h[:, None] - nb_h
    return (kk * diff * diff + ee * np.cos(diff)).sum(axis=1) - xi * h


def metropolis_numpy(phi, nbr, k, eps, xi, order, starts, width, normals, uniforms):
    accepted = 0
    for b in range(len(starts) - 1):
        sl = slice(starts[b], starts[b + 1])
        s = order[sl]
        nb_h = phi[nbr[s]]
        kk, ee, xx = k[s], eps[s], xi[s]
        old = phi[s]
        new = old + width * normals[sl]
        dE = _local_energy_numpy(new, nb_h, kk, ee, xx) - _local_energy_numpy(old, nb_h, kk, ee, xx)
        acc = np.log(uniforms[sl]) < -dE
        phi[s] = np.where(acc, new, old)
        accepted += int(acc.sum())
    return accepted


def site_forces_numpy(phi, nbr, k, eps, n):
    """dH/dphi(x) = sum_j V_j'(phi(x) - phi(y_j)) for every interior site."""
    diff = phi[:n, None] - phi[nbr]
    return (2.0 * k * diff - eps * np.sin(diff)).sum(axis=1)


# ----------------------------------------------------------------------- numba
if HAVE_NUMBA:

    @njit(cache=True)
    def heat_bath_numba(phi, nbr, k, xi, order, starts, normals):
        m = nbr.shape[1]
        for t in range(order.shape[0]):
            x = order[t]
            prec = 0.0
            acc = 0.0
            for j in range(m):
                prec += k[x, j]
                acc += k[x, j] * phi[nbr[x, j]]
            prec *= 2.0
            phi[x] = (2.0 * acc + xi[x]) / prec + normals[t] / np.sqrt(prec)

    @njit(cache=True)
    def _local_energy_numba(h, x, phi, nbr, k, eps, xi):
        e = 0.0
        for j in range(nbr.shape[1]):
            diff = h - phi[nbr[x, j]]
            e += k[x, j] * diff * diff + eps[x, j] * np.cos(diff)
        return e - xi[x] * h

    @njit(cache=True)
    def metropolis_numba(phi, nbr, k, eps, xi, order, starts, width, normals, uniforms):
        accepted = 0
        for t in range(order.shape[0]):
            x = order[t]
            old = phi[x]
            new = old + width * normals[t]
            dE = _local_energy_numba(new, x, phi, nbr, k, eps, xi) - _local_energy_numba(old, x, phi, nbr, k, eps, xi)
            if np.log(uniforms[t]) < -dE:
                phi[x] = new
                accepted += 1
        return accepted

    @njit(cache=True)
    def site_forces_numba(phi, nbr, k, eps, n):
        out = np.zeros(n)
        for x in range(n):
            f = 0.0
            for j in range(nbr.shape[1]):
                diff = phi[x] - phi[nbr[x, j]]
                f += 2.0 * k[x, j] * diff - eps[x, j] * np.sin(diff)
            out[x] = f
        return out

    heat_bath = heat_bath_numba
    metropolis = metropolis_numba
    site_forces = site_forces_numba
else:
    heat_bath = heat_bath_numpy
    metropolis = metropolis_numpy
    site_forces = site_forces_numpy


def backend() -> str:
    return "numba" if HAVE_NUMBA else "numpy"
