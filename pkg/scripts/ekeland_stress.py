"""Random grid instances for the discrete Ekeland point, checked exhaustively."""
import argparse
import time

import numpy as np

from decoupling.varprinciple import GridSpace, ekeland_on_grid, evp_check


def instance(rng, max_points):
    n = int(rng.integers(1, max_points + 1))
    dim = int(rng.integers(1, 4))
    copies = int(rng.integers(1, 3))
    if rng.random() < 0.5:
        P = rng.uniform(-3, 3, (n, copies, dim))
    else:
        P = rng.integers(-4, 5, (n, copies, dim)).astype(float)
    f = np.round(rng.normal(0, 5, n), int(rng.integers(0, 3)))
    _, first, inv = np.unique(P.reshape(n, -1), axis=0, return_index=True, return_inverse=True)
    f = f[first][inv.ravel()]
    return P, f, int(rng.integers(0, n)), float(10 ** rng.uniform(-3, 1))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--trials", type=int, default=10_000)
    ap.add_argument("--max-points", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    t0 = time.perf_counter()
    fails = 0
    for _ in range(args.trials):
        P, f, start, eps = instance(rng, args.max_points)
        space = GridSpace(P)
        fails += not evp_check(f, space, start, ekeland_on_grid(f, space, start, eps), eps)
    print(f"{args.trials - fails}/{args.trials} pass in {time.perf_counter() - t0:.1f}s")
    return 1 if fails else 0


if __name__ == "__main__":
    raise SystemExit(main())
