"""Compare the compiled kNN kernel against the numpy fallback.

Usage: python3 benchmarks/bench_knn.py [--m 4000] [--q 4000] [--dims 1 2 3] [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from einv import kernels


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--m", type=int, default=4000, help="training rows")
    ap.add_argument("--q", type=int, default=4000, help="query rows")
    ap.add_argument("--dims", type=int, nargs="+", default=[1, 2, 3])
    ap.add_argument("--cols", type=int, default=2, help="response columns")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    if kernels.BACKEND != "compiled":
        print("compiled kernels unavailable; timing the numpy fallback only")
    rng = np.random.default_rng(0)
    k = max(2, int(round(np.sqrt(args.m))))
    print(f"{'dim':>4} {'numpy [ms]':>12} {'compiled [ms]':>14} {'speedup':>8} {'max |diff|':>11}")
    for dim in args.dims:
        tx, qx = rng.normal(size=(args.m, dim)), rng.normal(size=(args.q, dim))
        ty = rng.normal(size=(args.m, args.cols))
        ref = kernels.knn_mean(tx, ty, qx, k, backend="numpy")
        t_np = min(timeit.repeat(lambda: kernels.knn_mean(tx, ty, qx, k, backend="numpy"), number=1, repeat=args.repeat))
        if kernels.BACKEND == "compiled":
            out = kernels.knn_mean(tx, ty, qx, k, backend="compiled")
            t_c = min(timeit.repeat(lambda: kernels.knn_mean(tx, ty, qx, k, backend="compiled"), number=1, repeat=args.repeat))
            print(f"{dim:>4} {1e3 * t_np:12.1f} {1e3 * t_c:14.1f} {t_np / t_c:8.1f} {np.abs(out - ref).max():11.2e}")
        else:
            print(f"{dim:>4} {1e3 * t_np:12.1f} {'-':>14} {'-':>8} {'-':>11}")


if __name__ == "__main__":
    main()
