"""Command-line front end.

Every run writes one JSON report (plus a CSV of the traces when there are
any) to the output directory, and prints the JSON to stdout.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .core import Ball
from .dsl import DSLError, load_family, parse_region, region_text

OUT_ENV = "DECOUPLING_OUT"


@dataclass
class RunConfig:
    command: str
    family: Optional[str] = None
    region: Optional[str] = None
    seed: int = 0
    out: str = "reports"
    strict: bool = False
    workers: int = 1
    tol_rel: float = 1e-4
    params: dict = field(default_factory=dict)


class UsageError(Exception):
    pass


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return v


def _points(text: str, dim: int) -> np.ndarray:
    """'1,2;3,4' -> two points of dimension 2."""
    try:
        rows = [[float(a) for a in p.split(",")] for p in text.split(";") if p.strip()]
    except ValueError:
        raise UsageError(f"cannot read points from {text!r}") from None
    P = np.array(rows, dtype=float)
    if P.ndim != 2 or P.shape[1] != dim:
        raise UsageError(f"points must have {dim} coordinates")
    return P


def _vector(text: str, dim: int) -> np.ndarray:
    return _points(text, dim)[0]


def _load(args):
    if not args.family:
        raise UsageError("--family is required")
    ff = load_family(args.family)
    region = parse_region(args.region) if getattr(args, "region", None) else ff.region
    if region is None:
        raise UsageError("no region: pass --region or put 'region :=' in the family file")
    return ff, region


def _decouple_config(args, ff, region):
    from .decouple import DecoupleConfig

    kw = dict(region=region, seed=args.seed)
    if getattr(args, "delta0", None) is not None:
        kw["delta0"] = args.delta0
    elif "delta0" in ff.meta:
        kw["delta0"] = float(ff.meta["delta0"])
    for name in ("delta_levels", "multistarts", "grid_density"):
        v = getattr(args, name, None)
        if v is not None:
            kw[name] = v
    return DecoupleConfig(**kw)


def _trace_rows(estimates):
    rows = []
    for e in estimates:
        for r in e.trace:
            d = r.delta if r.delta is not None else r.rho
            rows.append((r.quantity, r.s_size, d, r.value))
    return rows


# --------------------------------------------------------------------------
# subcommands


def cmd_eval(args):
    ff, _ = _load_noregion(args)
    fam = ff.family
    P = _points(args.at, fam.dim)
    ids = fam.enumeration()
    vals = {str(t): fam.member(t).values(P) for t in ids}
    return {"points": P, "values": vals, "sum": fam.sum_over(ids, P) if fam.is_finite else None}, [], []


def _load_noregion(args):
    if not args.family:
        raise UsageError("--family is required")
    ff = load_family(args.family)
    return ff, ff.region


def cmd_sum(args):
    from .functions.family import upper_sum

    ff, _ = _load_noregion(args)
    out = []
    for x in _points(args.at, ff.family.dim):
        r = upper_sum(ff.family, x)
        out.append({"x": x, "value": r.value, "radius": r.radius, "inconclusive": r.inconclusive, "note": r.note})
    return {"upper_sum": out}, [], []


def cmd_estimate(args):
    from . import decouple as D

    ff, region = _load(args)
    cfg = _decouple_config(args, ff, region)
    fam = ff.family
    q = args.command
    if q == "theta" and args.v_region:
        V = parse_region(args.v_region)
        est = D.theta_UV_estimate(fam, region, V, cfg)
    elif args.quasi:
        est = {"lambda": D.quasi_lambda_estimate, "theta": D.quasi_theta_estimate, "delta": D.quasi_delta_estimate}[q](fam, cfg)
    else:
        est = {"lambda": D.lambda_estimate, "theta": D.theta_estimate, "delta": D.delta_estimate}[q](fam, cfg)
    return {"config": cfg.echo(), "estimate": est.to_json()}, [est], []


CERTIFIERS = {
    "uniform": "certify_uniform_lsc",
    "firm": "certify_firm_uniform_lsc",
    "quasi": "certify_quasi_uniform_lsc",
    "firm-quasi": "certify_firm_quasi_uniform_lsc",
    "weak-delta": "certify_weak_delta",
    "weak-firm": "certify_weak_firm",
    "inf-stable": "certify_inf_stability",
    "inf-quasistable": "certify_inf_quasi_stability",
    "joint": "check_joint_lsc",
    "inf-compact": "check_inf_compact_sufficient",
}


def cmd_certify(args):
    from . import certify as C

    ff, region = _load(args)
    cfg = _decouple_config(args, ff, region)
    tol = C.Tolerance(rel=args.tol_rel)
    fn = getattr(C, CERTIFIERS[args.property])
    if args.property == "joint":
        if not args.at:
            raise UsageError("certify joint needs --at")
        cert = fn(ff.family, _vector(args.at, ff.family.dim), cfg, tol)
    elif args.property == "inf-compact":
        if not args.t0:
            raise UsageError("certify inf-compact needs --t0")
        cert = fn(ff.family, args.t0, cfg, tol)
    else:
        cert = fn(ff.family, cfg, tol)
    return {"config": cfg.echo(), "certificate": cert.to_json()}, list(cert.estimates), [cert.verdict]


def cmd_ekeland(args):
    from .varprinciple import build_penalized, ekeland_step_on_product

    ff, _ = _load_noregion(args)
    fam = ff.family
    xbar = _vector(args.at, fam.dim)
    fs = fam.members if fam.is_finite else fam.restrict(fam.enumeration())
    dprime = args.delta_prime
    eps_p = args.eps_prime if args.eps_prime is not None else args.eps * dprime / 4
    rho = args.rho if args.rho is not None else 0.75 * dprime
    eta = args.eta if args.eta is not None else rho / 2
    from .varprinciple import ball_grid

    grid = ball_grid(xbar, rho, args.per_axis)
    c = min(float(np.min(f.values(grid))) for f in fs)
    obj = build_penalized(fs, xbar, rho, args.eps, eps_p, eta, c, dprime)
    res = ekeland_step_on_product(obj, per_axis=args.per_axis)
    return {
        "params": {"alpha": obj.alpha, "xi": obj.xi, "gamma": obj.gamma, "rho": rho, "eps_prime": eps_p, "eta_prime": eta, "c_lower": c},
        "point": res.points,
        "sum_at_point": res.sum_at_point,
        "sum_at_anchor": res.sum_at_anchor,
        "diam": res.diam,
        "anchor_dist": res.anchor_dist,
        "checks": res.checks,
        "heuristic": res.heuristic,
        "grid_size": res.grid_size,
        "mesh": res.mesh,
    }, [], []


def _multiplier_config(args):
    from .multiplier import MultiplierConfig

    return MultiplierConfig(delta=args.delta, assume_certified=args.assume_certified, seed=args.seed, allowed_defect=args.allowed_defect)


def _s0(args, fam):
    if not args.s0:
        return []
    out = []
    for t in args.s0.split(","):
        t = t.strip()
        out.append(int(t) if not fam.is_finite else t)
    return out


def cmd_multiplier(args):
    from .multiplier import multiplier_search

    ff, _ = _load_noregion(args)
    res = multiplier_search(ff.family, _vector(args.at, ff.family.dim), args.eps, _s0(args, ff.family), _multiplier_config(args))
    return {"result": res.to_json()}, [], []


def cmd_sumrule(args):
    from .multiplier import fuzzy_sum_rule

    ff, _ = _load_noregion(args)
    d = ff.family.dim
    res = fuzzy_sum_rule(ff.family, _vector(args.at, d), _vector(args.xstar, d), args.eps, _s0(args, ff.family), _multiplier_config(args))
    return {"result": res.to_json()}, [], []


def _corpus_one(job):
    from .corpus import entry, evaluate_expectation

    eid, k, seed = job
    e = entry(eid)
    return evaluate_expectation(e, e.expected[k], seed)


def cmd_corpus(args):
    from .corpus import CORPUS, entry

    if args.all or not args.entry:
        entries = list(CORPUS)
    else:
        entries = [entry(e) for e in args.entry]
    jobs = [(e.id, k, args.seed) for e in entries for k in range(len(e.expected))]
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as ex:
            rows = list(ex.map(_corpus_one, jobs))
    else:
        rows = [_corpus_one(j) for j in jobs]
    report = {
        "entries": [e.id for e in entries],
        "results": rows,
        "passed": sum(r["pass"] for r in rows),
        "total": len(rows),
        "all_pass": all(r["pass"] for r in rows),
    }
    verdicts = [] if report["all_pass"] else ["Fails"]
    return report, [], verdicts


COMMANDS = {
    "eval": cmd_eval,
    "sum": cmd_sum,
    "lambda": cmd_estimate,
    "theta": cmd_estimate,
    "delta": cmd_estimate,
    "certify": cmd_certify,
    "ekeland": cmd_ekeland,
    "multiplier": cmd_multiplier,
    "sumrule": cmd_sumrule,
    "corpus": cmd_corpus,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--strict", action="store_true", help="exit 1 when a verdict is Fails")
    common.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    common.add_argument("--out", default=None, help=f"report directory (default ${OUT_ENV} or ./reports)")
    common.add_argument("--no-write", action="store_true", help="print the report without writing files")
    common.add_argument("--tol-rel", type=float, default=1e-4)

    fam = argparse.ArgumentParser(add_help=False)
    fam.add_argument("--family", required=True, help="family file in the DSL")

    est = argparse.ArgumentParser(add_help=False)
    est.add_argument("--region", help="e.g. '[-2,2]', '[0,1]x[0,1]', 'whole:[..]', 'ball:(0,0);1'")
    est.add_argument("--delta0", type=float)
    est.add_argument("--delta-levels", dest="delta_levels", type=int)
    est.add_argument("--multistarts", type=int)
    est.add_argument("--grid-density", dest="grid_density", type=int)

    mult = argparse.ArgumentParser(add_help=False)
    mult.add_argument("--at", required=True)
    mult.add_argument("--eps", type=float, required=True)
    mult.add_argument("--delta", type=float, help="radius of the local-minimum ball (default eps)")
    mult.add_argument("--s0", help="comma-separated indices that must be in S")
    mult.add_argument("--assume-certified", action="store_true")
    mult.add_argument("--allowed-defect", type=float, default=0.0)

    p = argparse.ArgumentParser(prog="decoupling", description="decoupling estimators, certificates and multiplier searches")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("eval", parents=[common, fam], help="member values at points")
    s.add_argument("--at", required=True, help="points as 'x1,x2;y1,y2'")
    s = sub.add_parser("sum", parents=[common, fam], help="upper sum at points")
    s.add_argument("--at", required=True)
    for q in ("lambda", "theta", "delta"):
        s = sub.add_parser(q, parents=[common, fam, est])
        s.add_argument("--quasi", action="store_true")
        if q == "theta":
            s.add_argument("--v-region", help="fix the tuple region V (two-set firm constant)")
    s = sub.add_parser("certify", parents=[common, fam, est])
    s.add_argument("property", choices=sorted(CERTIFIERS))
    s.add_argument("--at")
    s.add_argument("--t0")
    s = sub.add_parser("ekeland", parents=[common, fam], help="grid Ekeland point of the penalized objective")
    s.add_argument("--at", required=True)
    s.add_argument("--eps", type=float, required=True)
    s.add_argument("--delta-prime", type=float, default=1.0)
    s.add_argument("--eps-prime", type=float)
    s.add_argument("--rho", type=float)
    s.add_argument("--eta", type=float)
    s.add_argument("--per-axis", type=int, default=33)
    sub.add_parser("multiplier", parents=[common, fam, mult])
    s = sub.add_parser("sumrule", parents=[common, fam, mult])
    s.add_argument("--xstar", required=True)
    s = sub.add_parser("corpus", parents=[common])
    s.add_argument("--all", action="store_true")
    s.add_argument("--entry", action="append")
    return p


def _write(report: dict, rows, out_dir: Path, stem: str):
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"{stem}.json").write_text(json.dumps(report, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    if rows:
        with open(out_dir / f"{stem}.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["quantity", "s_size", "delta", "value"])
            for r in rows:
                w.writerow([r[0], r[1], repr(float(r[2])) if r[2] is not None else "", repr(float(r[3]))])


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    run = RunConfig(
        command=args.command,
        family=getattr(args, "family", None),
        region=getattr(args, "region", None),
        seed=args.seed,
        out=args.out or os.environ.get(OUT_ENV, "reports"),
        strict=args.strict,
        workers=args.workers,
        tol_rel=args.tol_rel,
        params={k: v for k, v in sorted(vars(args).items()) if k not in ("command", "family", "region", "seed", "out", "strict", "workers", "tol_rel", "no_write")},
    )
    try:
        body, estimates, verdicts = COMMANDS[args.command](args)
    except DSLError as exc:
        print(f"decoupling: {exc}", file=sys.stderr)
        return 2
    except (UsageError, FileNotFoundError) as exc:
        print(f"decoupling: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # estimator-level errors become a report, exit 3
        body, estimates, verdicts = {"error": f"{type(exc).__name__}: {exc}"}, [], ["Error"]
    run_echo = asdict(run)
    run_echo.pop("workers")  # the pool size does not change results
    report = {
        "tool": "decoupling",
        "version": __version__,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "run": run_echo,
        "results": body,
    }
    report = _jsonable(report)
    if not args.no_write:
        stem = args.command if args.command != "certify" else f"certify-{args.property}"
        _write(report, _trace_rows(estimates), Path(run.out), stem)
    print(json.dumps(report, sort_keys=True, indent=2))
    if "Error" in verdicts:
        return 3
    if args.command == "corpus" and "Fails" in verdicts:
        return 1
    if run.strict and "Fails" in verdicts:
        return 1
    return 0


def entry_point():
    sys.exit(main())
