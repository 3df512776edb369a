"""Compare the compiled and numpy box dynamic programs on random 2-D populations.

Usage: python3 benchmarks/bench_box_dp.py [--repeat N] [--depth D]
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from dlab import kernels
from dlab.population import Population
from dlab.trees import optimal_tree_levels


def population(values: int, features: int, seed: int = 0) -> Population:
    rng = np.random.default_rng(seed)
    n = values ** features
    X = rng.integers(0, values, size=(n, features)).astype(float)
    return Population(X, rng.random(n))


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--depth", type=int, default=6)
    args = ap.parse_args()
    print(f"default backend: {kernels.BACKEND}")
    print(f"{'grid':>10} {'depth':>5} " + " ".join(f"{name + ' [s]':>12}" for name in kernels.IMPLEMENTATIONS)
          + "  identical")
    for values, features in [(8, 2), (12, 2), (16, 2), (6, 3)]:
        P = population(values, features)
        times, results = {}, {}
        for name, impl in kernels.IMPLEMENTATIONS.items():
            times[name] = min(timeit.repeat(lambda: optimal_tree_levels(P, args.depth, backend=impl),
                                            number=1, repeat=args.repeat))
            results[name] = optimal_tree_levels(P, args.depth, backend=impl)
        same = len({(r.risks, r.trees) for r in results.values()}) == 1
        grid = "x".join([str(values)] * features)
        print(f"{grid:>10} {args.depth:>5} " + " ".join(f"{times[n]:>12.4f}" for n in times) + f"  {same}")


if __name__ == "__main__":
    main()
