"""Time the compiled kernels against the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from neighbor_confidence import kernels
from neighbor_confidence.nnindex import NeighborIndex


def cases(rng: np.random.Generator) -> dict:
    x = rng.normal(size=(16 * 64, 64))
    w = rng.normal(size=(128, 64))
    b = rng.normal(size=128)
    a = rng.normal(size=(16, 64, 3))
    c = rng.normal(size=(16, 64, 3))
    index = NeighborIndex(range(5000), rng.normal(size=(5000, 16)))
    tree = index._tree_arrays()
    queries = rng.normal(size=(50, 16))
    return {
        "dense_rows 1024x64 -> 128": lambda impl: kernels.dense_rows(x, w, b, impl=impl),
        "chamfer_nn 16 x 64 pts": lambda impl: kernels.chamfer_nn(a, c, impl=impl),
        "kd_query 50 q, 5000 x 16-d": lambda impl: [kernels.kd_query(tree, q, 1, impl=impl) for q in queries],
    }


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--number", type=int, default=3)
    args = parser.parse_args(argv)

    backends = kernels.available_backends()
    rng = np.random.default_rng(0)
    print(f"active backend: {kernels.BACKEND}")
    print(f"{'kernel':30s}" + "".join(f"{name:>14s}" for name in backends) + "   speedup")
    for label, fn in cases(rng).items():
        best = {}
        for name, impl in backends.items():
            t = timeit.repeat(lambda: fn(impl), repeat=args.repeat, number=args.number)
            best[name] = min(t) / args.number
        row = f"{label:30s}" + "".join(f"{best[n] * 1e3:11.3f} ms" for n in backends)
        if "cython" in best:
            row += f"   {best['python'] / best['cython']:6.1f}x"
        print(row)


if __name__ == "__main__":
    main()
