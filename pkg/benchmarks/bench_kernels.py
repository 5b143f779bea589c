"""Time each hot kernel under the numba and numpy backends on identical inputs.

Run: python benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import time

import numpy as np

from sparse_spectra import kernels
from sparse_spectra.model import ModelParams, sample_modified


def cases(rng):
    b = sample_modified(ModelParams(2000, 4, seed=1))
    sets = np.array([rng.choice(b.cols, 6, replace=False) for _ in range(5000)])
    poles = np.sort(rng.random(400))[::-1] * 10
    weights = rng.random(400)
    up = rng.random((20_000, 200)) < 0.01
    pts = rng.standard_normal(4000) + 1j * rng.standard_normal(4000)
    eigs = rng.standard_normal(1000) + 1j * rng.standard_normal(1000)
    zs = rng.standard_normal(2000) + 1j * rng.standard_normal(2000)
    return {
        "unique_neighbor_counts": lambda be: kernels.unique_neighbor_counts(b.col_ptr, b.csc_rows, b.rows, sets, be),
        "secular_roots": lambda be: kernels.secular_roots(poles, weights, 200, be)[0],
        "drift_chain_final": lambda be: kernels.drift_chain_final(up, be),
        "ball_counts": lambda be: kernels.ball_counts(pts, pts, 0.05, be),
        "mean_log_distance": lambda be: kernels.mean_log_distance(eigs, zs, be),
    }


def best_time(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    rng = np.random.default_rng(42)
    print(f"{'kernel':26s} {'numba [s]':>10s} {'numpy [s]':>10s} {'speedup':>8s}  agree")
    for name, run in cases(rng).items():
        fast = run("numba")      # first call compiles
        slow = run("numpy")
        agree = np.allclose(fast, slow, rtol=1e-12, atol=1e-12)
        t_nb = best_time(lambda: run("numba"), args.repeat)
        t_np = best_time(lambda: run("numpy"), args.repeat)
        print(f"{name:26s} {t_nb:10.4f} {t_np:10.4f} {t_np / t_nb:8.1f}  {agree}")


if __name__ == "__main__":
    main()
