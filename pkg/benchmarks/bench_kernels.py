"""Compare the compiled and pure-Python DBSCAN expansion kernels.

    python benchmarks/bench_kernels.py [--durations 5 20 60] [--repeat 3]

Times the expansion kernel alone on a prebuilt neighbour graph and the
whole ``auto_cluster`` pass on a simulated observed grid with each kernel.
"""
import argparse
import time

import numpy as np

from iotsense import _backend, _fallback
from iotsense.clustering import (DbscanParams, auto_cluster, map_to_euclidean,
                                 grid_to_points, knee_point, knn_distance_curve,
                                 min_points_heuristic, neighbor_graph)
from iotsense.detection import binarize
from iotsense.simulator import TrafficSpec, generate_traffic, synthesize_psd, thresholds_for_pfa


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def observed_grid(duration, seed=0):
    spec = TrafficSpec(duration=duration, band=2e6, arrival_rate=20, snr_db=5, seed=seed)
    psd = synthesize_psd(generate_traffic(spec), spec)
    return binarize(psd, float(thresholds_for_pfa([1e-3], spec.noise_power)[0]))


def main():
    ap = argparse.ArgumentParser(description="Compare the compiled and pure-Python kernels.")
    ap.add_argument("--durations", type=float, nargs="+", default=[5.0, 20.0, 60.0],
                    help="simulated capture lengths in seconds")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    if _backend.BACKEND != "cython":
        print("compiled kernels are not built; only the fallback is timed")
    compiled = _backend.expand_clusters if _backend.BACKEND == "cython" else None

    print(f"{'capture':>8} {'points':>8} {'edges':>10} {'compiled':>10} "
          f"{'python':>10} {'speedup':>8} {'auto_cluster':>13}")
    for dur in args.durations:
        grid = observed_grid(dur)
        mapped = map_to_euclidean(grid_to_points(grid))
        mu = min_points_heuristic(mapped)
        eps = knee_point(knn_distance_curve(mapped, mu)).value * (1 + 1e-9)
        indptr, indices = neighbor_graph(mapped.points, DbscanParams(mu, eps).eps)
        core = ((np.diff(indptr) + 1) >= mu).astype(np.uint8)

        t_py = best_of(lambda: _fallback.expand_clusters(indptr, indices, core), args.repeat)
        if compiled is not None:
            t_c = best_of(lambda: compiled(indptr, indices, core), args.repeat)
            assert np.array_equal(compiled(indptr, indices, core),
                                  _fallback.expand_clusters(indptr, indices, core))
            speed = f"{t_py / t_c:7.1f}x"
            t_c_s = f"{t_c * 1e3:8.2f}ms"
        else:
            speed, t_c_s = "-", "-"
        t_all = best_of(lambda: auto_cluster(grid), args.repeat)
        print(f"{dur:7.0f}s {len(mapped):8d} {indices.size:10d} {t_c_s:>10} "
              f"{t_py * 1e3:8.2f}ms {speed:>8} {t_all * 1e3:11.1f}ms")


if __name__ == "__main__":
    main()
