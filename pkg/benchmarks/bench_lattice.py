#!/usr/bin/env python3
"""Benchmark: compiled vs pure-Python lattice kernels.

Times the full loss+gradient pass (the training hot path) on lattices
shaped like the synthetic task, and cross-checks that both backends
produce the same numbers.

    python benchmarks/bench_lattice.py [--reps 50]
"""
import argparse
import time

import numpy as np

import fnt.lattice as lattice


def time_backend(kernel, lattices, reps):
    # warm up once, then take the best of `reps` full sweeps
    for lat, targets in lattices:
        kernel.loss_and_grad(lat, targets)
    best = float("inf")
    for _ in range(reps):
        t0 = time.perf_counter()
        for lat, targets in lattices:
            kernel.loss_and_grad(lat, targets)
        best = min(best, time.perf_counter() - t0)
    return best / len(lattices)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--reps", type=int, default=20)
    parser.add_argument("--n-lattices", type=int, default=20)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    shapes = [(20, 6, 33), (40, 10, 33), (80, 16, 33)]
    try:
        compiled = lattice.kernels("compiled")
    except ImportError:
        compiled = None
        print("compiled kernel not built; showing pure-Python numbers only\n")
    pure = lattice.kernels("python")

    print(f"{'shape (T,U,V)':>16} {'python ms':>10} {'compiled ms':>12} {'speedup':>8}")
    for T, U, V in shapes:
        lattices = []
        for _ in range(args.n_lattices):
            lat = lattice.random_lattice(rng, T, U, V)
            lattices.append((lat.logp, lat.target_array()))
        py_ms = time_backend(pure, lattices, args.reps) * 1e3
        if compiled is not None:
            c_ms = time_backend(compiled, lattices, args.reps) * 1e3
            # sanity: identical results on the first lattice
            lp, tg = lattices[0]
            lc, gc = compiled.loss_and_grad(lp, tg)
            lpy, gpy = pure.loss_and_grad(lp, tg)
            assert abs(lc - lpy) < 1e-12 and np.abs(gc - gpy).max() < 1e-12
            print(f"{str((T, U, V)):>16} {py_ms:>10.3f} {c_ms:>12.3f} {py_ms / c_ms:>7.1f}x")
        else:
            print(f"{str((T, U, V)):>16} {py_ms:>10.3f} {'-':>12} {'-':>8}")
    print(f"\nactive backend at import time: {lattice.BACKEND}")


if __name__ == "__main__":
    main()
