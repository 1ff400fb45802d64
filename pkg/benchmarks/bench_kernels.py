"""Benchmark the numba kernels against the pure-numpy fallback path.

Run:  python benchmarks/bench_kernels.py [--repeats N]

Each kernel is timed on a workload shaped like a full-scene detection run
(1022x1022 rasters, 73x73 patch grids). Results from both paths are checked
for agreement before timing.
"""
import argparse
import time

import numpy as np

from protochange._kernels import _numba, _numpy


def timeit(fn, repeats):
    fn()  # warm-up (numba compiles here)
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    rng = np.random.default_rng(0)

    # kmeans workloads: full-resolution pixels (pcakmeans) and patch cells.
    x_pixels = np.ascontiguousarray(rng.normal(size=(1022 * 1022, 3)))
    cents = np.ascontiguousarray(rng.normal(size=(2, 3)))
    labels_px = _numpy.kmeans_assign(x_pixels, cents)

    key = rng.integers(0, 6, size=(1022, 1022)).astype(np.int64)
    seg_labels = _numpy.label_components(key)
    nseg = int(seg_labels.max())
    coarse = rng.random((1022, 1022)) > 0.5

    padded = np.ascontiguousarray(rng.random((1026, 1026)))
    mean = np.ascontiguousarray(rng.random(16))
    comps = np.ascontiguousarray(rng.normal(size=(3, 16)))

    cases = [
        (
            "kmeans_assign (1M x 3, k=2)",
            lambda: _numpy.kmeans_assign(x_pixels, cents),
            lambda: _numba.kmeans_assign(x_pixels, cents),
        ),
        (
            "kmeans_update (1M x 3, k=2)",
            lambda: _numpy.kmeans_update(x_pixels, labels_px, 2),
            lambda: _numba.kmeans_update(x_pixels, labels_px, 2),
        ),
        (
            "point_sq_dists (1M x 3)",
            lambda: _numpy.point_sq_dists(x_pixels, cents[0]),
            lambda: _numba.point_sq_dists(x_pixels, cents[0]),
        ),
        (
            "label_components (1022^2, 6 levels)",
            lambda: _numpy.label_components(key),
            lambda: _numba.label_components(key),
        ),
        (
            f"overlap_counts (1022^2, {nseg} segments)",
            lambda: _numpy.overlap_counts(seg_labels, coarse, nseg),
            lambda: _numba.overlap_counts(seg_labels, coarse, nseg),
        ),
        (
            "block_project (1022^2, 4x4 win, 3 comps)",
            lambda: _numpy.block_project(padded, mean, comps, 4),
            lambda: _numba.block_project(padded, mean, comps, 4),
        ),
    ]

    print(f"{'kernel':44s} {'numpy':>10s} {'numba':>10s} {'speedup':>8s}")
    for name, f_np, f_nb in cases:
        a, b = f_np(), f_nb()
        if isinstance(a, tuple):
            for x, y in zip(a, b):
                assert np.allclose(x, y), f"{name}: path results disagree"
        else:
            assert np.allclose(a, b), f"{name}: path results disagree"
        t_np = timeit(f_np, args.repeats)
        t_nb = timeit(f_nb, args.repeats)
        print(f"{name:44s} {t_np * 1e3:9.1f}ms {t_nb * 1e3:9.1f}ms {t_np / t_nb:7.1f}x")


if __name__ == "__main__":
    main()
