"""Compare the compiled and pure-Python kd-tree query kernels.

    python benchmarks/bench_knn.py [--n 20000] [--queries 2000] [--k 16]

Both kernels walk the same tree, so results must match exactly; the script
checks that before printing timings.
"""

import argparse
import time

import numpy as np

from wsseg import _fallback
from wsseg.core import build_index

try:
    from wsseg import _kernels
except ImportError:  # extension not built
    _kernels = None


def _time(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=20000)
    ap.add_argument("--queries", type=int, default=2000)
    ap.add_argument("--k", type=int, default=16)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    pts = rng.uniform(0, 10, size=(args.n, 3))
    qs = pts[rng.choice(args.n, args.queries, replace=False)]
    t0 = time.perf_counter()
    idx = build_index(pts)
    build = time.perf_counter() - t0
    tree = (idx.points, idx._perm, idx._start, idx._stop, idx._left, idx._right, idx._lo, idx._hi)

    print(f"N={args.n} queries={args.queries} k={args.k}  (tree build {build * 1e3:.1f} ms)")
    t_py, ref = _time(lambda: _fallback.query_knn(*tree, qs, args.k), 1)
    print(f"{'python':<8} {t_py * 1e3:10.1f} ms  {args.queries / t_py:12.0f} queries/s")
    if _kernels is None:
        print("compiled kernel not available (build with Cython to compare)")
        return 0
    t_c, got = _time(lambda: _kernels.query_knn(*tree, qs, args.k), args.repeats)
    if not (np.array_equal(got[0], ref[0]) and np.array_equal(got[1], ref[1])):
        raise SystemExit("backends disagree")
    print(f"{'cython':<8} {t_c * 1e3:10.1f} ms  {args.queries / t_c:12.0f} queries/s")
    print(f"speed-up {t_py / t_c:.1f}x, identical results")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
