"""Print the lambda and theta traces of one family, level by level."""
import argparse

from decoupling.corpus import entry
from decoupling.decouple import lambda_estimate, theta_estimate


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("entry", help="corpus id, e.g. abs-pair")
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--delta-levels", type=int, default=10)
    args = ap.parse_args()
    e = entry(args.entry)
    fam, cfg = e.load().family, e.config(args.seed, delta_levels=args.delta_levels)
    for est in (lambda_estimate(fam, cfg), theta_estimate(fam, cfg)):
        print(f"{est.quantity}: {est.value!r} ({est.verdict})")
        for r in est.trace:
            print(f"  |S|={r.s_size:<3d} delta={r.delta!s:<12} value={r.value!r}")


if __name__ == "__main__":
    main()
