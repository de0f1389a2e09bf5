"""Run the inequality-chain checks over corpus families and print one row per check."""
import argparse
import json
import time

from decoupling.corpus import invariant_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--entry", action="append", help="restrict to these corpus ids")
    ap.add_argument("--json", action="store_true", help="dump the full reports as JSON")
    args = ap.parse_args()
    t0 = time.perf_counter()
    reports = invariant_sweep(args.seed, args.entry)
    if args.json:
        print(json.dumps([{"family": r.family, "checks": r.checks, "violations": r.violations, "skipped": r.skipped} for r in reports], indent=2, default=str))
    else:
        for r in reports:
            for name, row in r.checks.items():
                print(f"{r.family:20s} {name:32s} {'ok' if row['ok'] else 'VIOLATED'}")
        bad = sum(len(r.violations) for r in reports)
        print(f"{len(reports)} families, {bad} violations, {time.perf_counter() - t0:.1f}s")
    return 1 if any(r.violations for r in reports) else 0


if __name__ == "__main__":
    raise SystemExit(main())
