"""Benchmark the numba kernels against their pure-numpy fallbacks.

Runs the simplex projection on a batch of random vectors and the
long-horizon projected-gradient polytope oracle on the two families the
verification suite uses.  Usage: python benchmarks/bench_kernels.py
"""

import timeit

import numpy as np

from lglab.backends import USING_NUMBA
from lglab.kernels import (
    _pgd_simplex_lsq_nb,
    _pgd_simplex_lsq_np,
    _simplex_project_nb,
    _simplex_project_np,
)
from lglab.polytope import StructureFamily
from lglab.rng import make_rng, normals


def bench_projection(n_vectors=20000, k=16):
    rng = make_rng(0)
    vs = [np.ascontiguousarray(3.0 * normals(rng, k)) for _ in range(n_vectors)]

    def run_np():
        for v in vs:
            _simplex_project_np(v)

    def run_nb():
        for v in vs:
            _simplex_project_nb(v)

    t_np = timeit.timeit(run_np, number=1)
    rows = [("numpy", t_np)]
    if USING_NUMBA:
        _simplex_project_nb(vs[0])  # warm up the JIT
        rows.append(("numba", timeit.timeit(run_nb, number=1)))
    return f"simplex projection, {n_vectors} vectors of dim {k}", rows


def bench_pgd(n_inputs=20, max_iter=100_000):
    rng = make_rng(1)
    cases = []
    for family in (StructureFamily.arborescence(3), StructureFamily.k_subset(6, 3)):
        M = family.vertices
        G = np.ascontiguousarray(M @ M.T)
        step = 1.0 / (2.0 * float(np.linalg.eigvalsh(G)[-1]))
        q0 = np.full(M.shape[0], 1.0 / M.shape[0])
        for _ in range(n_inputs // 2):
            v = 1.5 * normals(rng, family.K)
            cases.append((G, np.ascontiguousarray(M @ v), np.ascontiguousarray(q0), step))

    def run(kernel):
        for G, c, q0, step in cases:
            kernel(G, c, q0, step, max_iter, 1e-13)

    t_np = timeit.timeit(lambda: run(_pgd_simplex_lsq_np), number=1)
    rows = [("numpy", t_np)]
    if USING_NUMBA:
        run(_pgd_simplex_lsq_nb)  # warm up the JIT
        rows.append(("numba", timeit.timeit(lambda: run(_pgd_simplex_lsq_nb), number=1)))
    return f"pgd polytope oracle, {n_inputs} inputs, cap {max_iter} iters", rows


def main():
    if not USING_NUMBA:
        print("numba unavailable or disabled (LGL_BACKEND=numpy); timing fallback only")
    for title, rows in (bench_projection(), bench_pgd()):
        print(title)
        base = rows[0][1]
        for name, t in rows:
            speedup = "" if name == "numpy" else f"  ({base / t:.1f}x vs numpy)"
            print(f"  {name:6s} {t * 1000:10.1f} ms{speedup}")


if __name__ == "__main__":
    main()
