"""Hot numeric kernels, each with a numba and a pure-numpy implementation.

Two loops dominate the runtime of the verification suites: the
sort-and-threshold projection onto the probability simplex (called inside
every estimator and inside the long-horizon oracle) and the projected
gradient descent over the vertex simplex used as the brute-force polytope
projection oracle.  ``benchmarks/bench_kernels.py`` compares the two
backends head to head.
"""

from __future__ import annotations

import numpy as np

from .backends import USING_NUMBA, njit


def _simplex_project_np(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the simplex, vectorized numpy version."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    j = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / j > 0.0)[0][-1]
    tau = css[rho] / (rho + 1.0)
    return np.maximum(v - tau, 0.0)


@njit(cache=True)
def _simplex_project_nb(v):
    n = v.shape[0]
    u = np.sort(v)[::-1]
    css = 0.0
    tau = 0.0
    for j in range(n):
        css += u[j]
        t = (css - 1.0) / (j + 1.0)
        if u[j] > t:
            tau = t
    out = np.empty(n)
    for i in range(n):
        d = v[i] - tau
        out[i] = d if d > 0.0 else 0.0
    return out


def _pgd_simplex_lsq_np(G, c, q0, step, max_iter, tol):
    """Projected gradient on f(q) = q'Gq - 2c'q over the simplex, numpy loop."""
    q = q0.copy()
    for _ in range(max_iter):
        g = 2.0 * (G @ q - c)
        gap = g @ q - g.min()
        if gap <= tol:
            break
        q = _simplex_project_np(q - step * g)
    return q


@njit(cache=True)
def _pgd_simplex_lsq_nb(G, c, q0, step, max_iter, tol):
    n = q0.shape[0]
    q = q0.copy()
    for _ in range(max_iter):
        g = 2.0 * (G @ q - c)
        gq = 0.0
        gmin = g[0]
        for i in range(n):
            gq += g[i] * q[i]
            if g[i] < gmin:
                gmin = g[i]
        if gq - gmin <= tol:
            break
        q = _simplex_project_nb(q - step * g)
    return q


if USING_NUMBA:
    _simplex_kernel = _simplex_project_nb
    _pgd_kernel = _pgd_simplex_lsq_nb
else:
    _simplex_kernel = _simplex_project_np
    _pgd_kernel = _pgd_simplex_lsq_np


def simplex_project(v: np.ndarray) -> np.ndarray:
    """Project ``v`` onto the probability simplex (active backend)."""
    return _simplex_kernel(np.ascontiguousarray(v, dtype=np.float64))


def pgd_simplex_lsq(
    G: np.ndarray,
    c: np.ndarray,
    q0: np.ndarray,
    step: float,
    max_iter: int,
    tol: float = 1e-13,
) -> np.ndarray:
    """Minimize q'Gq - 2c'q over the simplex by projected gradient descent.

    Runs up to ``max_iter`` iterations with fixed ``step``, stopping early
    once the linearized improvement bound drops below ``tol``.
    """
    G = np.ascontiguousarray(G, dtype=np.float64)
    c = np.ascontiguousarray(c, dtype=np.float64)
    q0 = np.ascontiguousarray(q0, dtype=np.float64)
    return _pgd_kernel(G, c, q0, float(step), int(max_iter), float(tol))
