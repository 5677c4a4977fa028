"""Per-cell kernel timings, numba against numpy.

    python benchmarks/bench_kernels.py [--sizes 0.1 0.05 0.025] [--repeat 5]

Each kernel is warmed up once (numba compiles on first call), then timed as
the best of ``--repeat`` calls. Results from the two backends are compared
before any timing is printed, so a wrong fast kernel cannot go unnoticed.
"""

import argparse
import time

import numpy as np

from elastowave.assembly import MaterialParams, assemble_bulk
from elastowave.geometry import build_mesh
from elastowave.kernels import elasticity_element_matrices, p1_geometry, scalar_mass_element_matrices


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_mesh(h, repeat):
    mesh = build_mesh("annulus", 1.0, 2.0, h)
    V, C = mesh.vertices, mesh.cells
    grads, vol = p1_geometry(V, C, backend="numpy")
    params = MaterialParams(1.0, 1.0)
    cases = {
        "p1_geometry": lambda b: p1_geometry(V, C, backend=b),
        "elasticity": lambda b: elasticity_element_matrices(grads, vol, 1.0, 1.0, backend=b),
        "mass": lambda b: scalar_mass_element_matrices(vol, 1.0, 3, backend=b),
        "assemble_bulk": lambda b: assemble_bulk(mesh, params, None, backend=b),
    }
    rows = []
    for name, fn in cases.items():
        a, b = fn("numpy"), fn("numba")
        if name != "assemble_bulk":
            for x, y in zip(np.atleast_1d(a) if not isinstance(a, tuple) else a,
                            np.atleast_1d(b) if not isinstance(b, tuple) else b):
                np.testing.assert_allclose(x, y, rtol=1e-12, atol=1e-12)
        t_np = best_of(lambda: fn("numpy"), repeat)
        t_nb = best_of(lambda: fn("numba"), repeat)
        rows.append((h, mesh.n_cells, name, t_np, t_nb))
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=float, nargs="+", default=[0.1, 0.05, 0.025])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    print(f"{'h':>7} {'cells':>8} {'kernel':>14} {'numpy [ms]':>11} {'numba [ms]':>11} {'speedup':>8}")
    for h in args.sizes:
        for h_, n, name, t_np, t_nb in bench_mesh(h, args.repeat):
            print(f"{h_:7.3f} {n:8d} {name:>14} {1e3 * t_np:11.3f} {1e3 * t_nb:11.3f} {t_np / t_nb:8.2f}")


if __name__ == "__main__":
    main()
