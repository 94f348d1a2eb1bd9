"""Time the numba kernels against their pure-numpy twins.

    python3 benchmarks/bench_kernels.py [--repeat 5]

With FUNCQUANT_DISABLE_NUMBA=1 both columns run uncompiled code, which is a
quick way to see what the JIT buys.
"""

import argparse
import time

import numpy as np

from funcquant import _kernels
from funcquant._accel import USE_NUMBA
from funcquant.bspline import make_basis, penalty_matrix


def best_of(fn, repeat):
    fn()  # warm-up (triggers compilation)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases():
    basis = make_basis(3, 32)
    t = np.linspace(0.0, 1.0, 20001)
    for d in (0, 2):
        yield (
            f"basis_matrix q=3 k=32 npts=20001 deriv={d}",
            lambda d=d: _kernels.basis_matrix_loops(basis.knots, 3, t, d),
            lambda d=d: _kernels.basis_matrix_numpy(basis.knots, 3, t, d),
        )
    rng = np.random.default_rng(0)
    small = make_basis(3, 5)
    A = rng.standard_normal((50, small.dim)) * 0.1
    y = rng.standard_normal(50)
    G = penalty_matrix(small, 2)
    its = 20000
    yield (
        f"subgradient n=50 dim={small.dim} iters={its}",
        lambda: _kernels.subgradient_loops(A, y, G, 0.01, 0.5, its, 0.1),
        lambda: _kernels.subgradient_numpy(A, y, G, 0.01, 0.5, its, 0.1),
    )


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    print(f"numba active: {USE_NUMBA}")
    print(f"{'kernel':48s} {'loops':>10s} {'numpy':>10s} {'speedup':>8s}")
    for name, loops, vec in cases():
        a = best_of(loops, args.repeat)
        b = best_of(vec, args.repeat)
        print(f"{name:48s} {a * 1e3:8.2f}ms {b * 1e3:8.2f}ms {b / a:7.1f}x")


if __name__ == "__main__":
    main()
