"""Compiled vs numpy neighbour kernels on branch-shaped clouds.

Usage: python benchmarks/bench_nn.py [--sizes 1024 2048 8192] [--repeat 3]

Prints the best-of-``repeat`` wall time per backend and operation, checks
that both backends return identical indices, and reports the speedup.
"""
import argparse
import time

import numpy as np

from branchkit import nn
from branchkit.synth_gen import sample_complete
from branchkit.pipeline import RunConfig, make_tree


def best_time(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[1024, 2048, 8192])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--k", type=int, default=5)
    args = ap.parse_args(argv)

    if "compiled" not in nn.available_backends():
        print("compiled extension not built; only the numpy backend is available")
    tree = make_tree(RunConfig(seed=0), 0)
    model = tree.branches[0][0]
    print(f"{'op':<10}{'n':>7}{'numpy ms':>12}{'compiled ms':>14}{'speedup':>10}")
    for n in args.sizes:
        pts = sample_complete(model, n, seed=1).points
        other = sample_complete(model, n // 4, seed=2).points
        ops = {
            "nearest": lambda b: nn.nearest(other, pts, backend=b)[0],
            "knn_self": lambda b: nn.knn_self(pts, args.k, backend=b)[0],
        }
        for name, op in ops.items():
            t_py, r_py = best_time(lambda: op("python"), args.repeat)
            if "compiled" in nn.available_backends():
                t_c, r_c = best_time(lambda: op("compiled"), args.repeat)
                if not np.array_equal(r_py, r_c):
                    raise SystemExit(f"backends disagree on {name} at n={n}")
                print(f"{name:<10}{n:>7}{1e3 * t_py:>12.2f}{1e3 * t_c:>14.2f}{t_py / t_c:>9.1f}x")
            else:
                print(f"{name:<10}{n:>7}{1e3 * t_py:>12.2f}{'-':>14}{'-':>10}")


if __name__ == "__main__":
    main()
