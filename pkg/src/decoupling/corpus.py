"""Reference families with expected outcomes, and the cross-estimator
inequality checks run over all of them."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .certify import (
    FAILS,
    HOLDS,
    DEFAULT_TOL,
    certify_firm_uniform_lsc,
    certify_inf_stability,
    certify_uniform_lsc,
    check_inf_compact_sufficient,
)
from .core import INF, directed_liminf, directed_limsup
from .decouple import (
    DIVERGING,
    DecoupleConfig,
    _chain_limit,
    delta_estimate,
    inf_of_upper_sum,
    lambda_estimate,
    quasi_lambda_estimate,
    quasi_theta_estimate,
    theta_estimate,
)
from .dsl import FamilyFile, load_family
from .functions.expr import Const
from .functions.family import FunctionFamily, upper_sum
from .multiplier import MultiplierConfig, fuzzy_sum_rule, multiplier_search

PAPER, TRIVIAL, DERIVED = "PAPER", "TRIVIAL", "DERIVED"


def fixtures_dir() -> Path:
    return Path(str(resources.files("decoupling") / "fixtures"))


def fixture(name: str) -> FamilyFile:
    return load_family(fixtures_dir() / name)


@dataclass
class Expectation:
    op: str
    expected: object
    provenance: str
    params: dict = field(default_factory=dict)
    oracle: str = ""

    def __post_init__(self):
        if self.provenance not in (PAPER, TRIVIAL, DERIVED):
            raise ValueError("provenance is PAPER, TRIVIAL or DERIVED")
        if self.provenance == DERIVED and not self.oracle:
            raise ValueError("DERIVED expectations name their oracle")


@dataclass
class CorpusEntry:
    id: str
    file: str
    expected: list
    notes: str = ""

    def load(self) -> FamilyFile:
        return fixture(self.file)

    def config(self, seed: int = 0, **overrides) -> DecoupleConfig:
        ff = self.load()
        kw = dict(region=ff.region, seed=seed)
        if "delta0" in ff.meta:
            kw["delta0"] = float(ff.meta["delta0"])
        kw.update(overrides)
        return DecoupleConfig(**kw)


E = Expectation

CORPUS: list = [
    CorpusEntry(
        "reciprocal-pair",
        "reciprocal-pair.fam",
        [
            E("inf", (0.0, 1e-3), PAPER),
            E("lambda_verdict", DIVERGING, PAPER),
            E("delta_value", INF, PAPER),
            E("certify:UniformLSC", FAILS, PAPER),
        ],
        "1/x and -1/x on [-2,2]",
    ),
    CorpusEntry(
        "nonfirm-r3",
        "nonfirm-r3.fam",
        [
            E("inf", (0.0, 1e-3), PAPER),
            E("lambda", (0.0, 1e-3), PAPER),
            E("certify:UniformLSC", HOLDS, PAPER),
            E("certify:FirmUniformLSC", FAILS, PAPER),
            E("theta_at_witness", (10, 10.0), PAPER),
        ],
        "indicator pair on R^3, searched on a window holding the witness sequences up to k = 110",
    ),
    CorpusEntry(
        "nonfirm-r3-triple",
        "nonfirm-r3-triple.fam",
        [
            E("lambda_verdict", DIVERGING, PAPER),
            E("certify:UniformLSC", FAILS, PAPER),
        ],
    ),
    CorpusEntry(
        "abs-pair",
        "abs-shift-pair.fam",
        [
            E("inf", (1.0, 1e-6), DERIVED, oracle="2-d grid brute force"),
            E("lambda", (1.0, 1e-6), DERIVED, oracle="2-d grid brute force"),
            E("theta", (0.0, 1e-4), DERIVED, oracle="x := x_1 construction"),
            E("delta_value", (0.0, 1e-6), DERIVED, oracle="2-d grid brute force"),
            E("certify:UniformLSC", HOLDS, DERIVED, oracle="2-d grid brute force"),
            E("certify:FirmUniformLSC", HOLDS, DERIVED, oracle="x := x_1 construction"),
            E("sumrule", 1e-9, DERIVED, {"at": [0.5], "xstar": [0.0], "eps": 0.1}, "interval arithmetic"),
        ],
        "|x| and |x-1|",
    ),
    CorpusEntry(
        "abs-twin",
        "abs-pair.fam",
        [
            E("sumrule", 1e-9, TRIVIAL, {"at": [0.0], "xstar": [1.5], "eps": 0.1}),
            E("sumrule", 1e-9, TRIVIAL, {"at": [0.0], "xstar": [-1.9], "eps": 0.05}),
            E("multiplier", 1e-9, TRIVIAL, {"at": [0.0], "eps": 0.1}),
        ],
        "|x| twice",
    ),
    CorpusEntry(
        "geometric-abs",
        "geometric-abs.fam",
        [
            E("upper_sum", (2.0, 4.0), DERIVED, oracle="geometric series"),
            E("multiplier", 1e-6, DERIVED, {"at": [0.0], "eps": 0.1}, "interval arithmetic with tail bound"),
            E("sumrule", 1e-6, DERIVED, {"at": [0.0], "xstar": [0.9], "eps": 0.1}, "interval-sum oracle with tail bound"),
            E("certify:InfStable", HOLDS, DERIVED, oracle="closed-form prefix infima"),
        ],
        "2^-t |x|, t >= 0",
    ),
    CorpusEntry(
        "geometric-quad",
        "geometric-quad.fam",
        [
            E("certify:InfStable", HOLDS, DERIVED, oracle="closed-form prefix infima"),
            E("inf", (0.0, 1e-6), DERIVED, oracle="closed-form prefix infima"),
        ],
        "2^-t x^2 on [-1,1]",
    ),
    CorpusEntry(
        "quad-abs",
        "quad-abs.fam",
        [
            E("sumrule", 1e-9, DERIVED, {"at": [0.0], "xstar": [0.5], "eps": 0.1}, "gradient plus interval"),
            E("certify:InfCompactSufficient", HOLDS, DERIVED, {"t0": "t1"}, "level sets are intervals"),
            E("lambda", (0.0, 1e-6), DERIVED, oracle="convex Lipschitz pair"),
        ],
    ),
    CorpusEntry(
        "constant",
        "constant.fam",
        [
            E("lambda", (2.5, 1e-12), TRIVIAL),
            E("delta_value", (0.0, 1e-12), TRIVIAL),
            E("theta", (0.0, 1e-12), TRIVIAL),
        ],
    ),
    CorpusEntry(
        "linear-box",
        "linear-box.fam",
        [
            E("multiplier", 1e-9, DERIVED, {"at": [0.0], "eps": 0.1}, "closed-form normal cone at the left endpoint"),
            E("inf", (0.0, 1e-6), DERIVED, oracle="closed form"),
        ],
    ),
    CorpusEntry(
        "plane-pair",
        "plane-pair.fam",
        [
            E("certify:UniformLSC", HOLDS, DERIVED, oracle="convex Lipschitz pair"),
            E("inf", (math.hypot(1.0, 0.5), 1e-3), DERIVED, oracle="triangle inequality"),
        ],
    ),
    CorpusEntry(
        "ball-affine",
        "ball-affine.fam",
        [
            E("inf", (-math.sqrt(2.0), 1e-3), DERIVED, oracle="support function of the disc"),
            E("certify:UniformLSC", HOLDS, DERIVED, oracle="convex pair, one Lipschitz"),
        ],
    ),
]


def entry(entry_id: str) -> CorpusEntry:
    for e in CORPUS:
        if e.id == entry_id:
            return e
    raise KeyError(entry_id)


def _close(got, expected):
    val, atol = expected
    if math.isinf(val):
        return got == val, 0.0 if got == val else INF
    return abs(got - val) <= atol, abs(got - val)


def evaluate_expectation(e: CorpusEntry, x: Expectation, seed: int = 0) -> dict:
    ff = e.load()
    fam = ff.family
    cfg = e.config(seed)
    got, ok, margin = None, False, None
    op = x.op
    if op == "inf":
        got, _, _ = inf_of_upper_sum(fam, cfg.region, cfg)
        lo, hi = (x.expected[0] - x.expected[1], x.expected[0] + x.expected[1])
        if x.expected[0] == 0.0 and e.id == "reciprocal-pair":
            lo, hi = 0.0, x.expected[1]
        ok = lo <= got <= hi
        margin = min(got - lo, hi - got)
    elif op == "lambda":
        est = lambda_estimate(fam, cfg)
        got = est.value
        ok, margin = _close(got, x.expected)
    elif op == "lambda_verdict":
        est = lambda_estimate(fam, cfg)
        got = est.verdict
        ok = got == x.expected
    elif op == "theta":
        est = theta_estimate(fam, cfg)
        got = est.value
        ok = got <= x.expected[0] + x.expected[1]
        margin = x.expected[0] + x.expected[1] - got
    elif op == "theta_at_witness":
        from .decouple import theta_inner_at

        k, need = x.expected
        tup = np.stack([fam.witnesses[t](k) for t in fam.enumeration()])
        got = theta_inner_at(fam, tup, cfg)
        ok = got >= need
        margin = got - need
    elif op == "delta_value":
        est = delta_estimate(fam, cfg)
        got = est.value
        exp = x.expected if isinstance(x.expected, tuple) else (x.expected, 0.0)
        ok, margin = _close(got, exp)
    elif op.startswith("certify:"):
        prop = op.split(":", 1)[1]
        runner = {
            "UniformLSC": certify_uniform_lsc,
            "FirmUniformLSC": certify_firm_uniform_lsc,
            "InfStable": certify_inf_stability,
        }
        if prop == "InfCompactSufficient":
            cert = check_inf_compact_sufficient(fam, x.params["t0"], cfg)
        else:
            cert = runner[prop](fam, cfg)
        got = cert.verdict
        ok = got == x.expected
    elif op == "upper_sum":
        at, val = x.expected
        res = upper_sum(fam, [at])
        got = res.value
        margin = res.radius - abs(got - val)
        ok = margin >= 0
    elif op in ("sumrule", "multiplier"):
        mc = MultiplierConfig(seed=seed)
        if op == "sumrule":
            res = fuzzy_sum_rule(fam, x.params["at"], x.params["xstar"], x.params["eps"], config=mc)
        else:
            res = multiplier_search(fam, x.params["at"], x.params["eps"], config=mc)
        got = res.dual_residual
        eps = x.params["eps"]
        within = bool(np.all(np.linalg.norm(np.asarray(res.points) - np.asarray(x.params["at"])[None], axis=1) < eps))
        defect_ok = res.sum_defect < eps
        ok = got <= x.expected and within and defect_ok
        margin = x.expected - got
    else:
        raise ValueError(f"unknown corpus operation {op}")
    return {
        "entry": e.id,
        "op": op,
        "params": x.params,
        "expected": _j(x.expected),
        "got": _j(got),
        "pass": bool(ok),
        "margin": _j(margin),
        "provenance": x.provenance + (f" ({x.oracle})" if x.oracle else ""),
    }


def _j(v):
    if isinstance(v, tuple):
        return [_j(a) for a in v]
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return v


def run_corpus(selection: Optional[Sequence[str]] = None, seed: int = 0) -> dict:
    entries = CORPUS if not selection else [entry(s) for s in selection]
    rows = []
    for e in entries:
        for x in e.expected:
            rows.append(evaluate_expectation(e, x, seed))
    return {
        "entries": [e.id for e in entries],
        "results": rows,
        "passed": sum(r["pass"] for r in rows),
        "total": len(rows),
        "all_pass": all(r["pass"] for r in rows),
    }


# --------------------------------------------------------------------------
# cross-estimator inequalities


@dataclass
class InvariantReport:
    family: str
    checks: dict
    violations: list
    skipped: list


def _finest_level(est) -> float:
    rows = [r for r in est.trace if r.delta is not None and np.isfinite(r.value)]
    if not rows:
        return 0.0
    d = min(r.delta for r in rows)
    return max(abs(r.value) for r in rows if r.delta == d)


# cheaper search settings for sweeping the whole corpus through check_invariants
SWEEP_OVERRIDES = dict(delta_levels=9, multistarts=24, rho_levels=2, theta_rounds=8, max_prefixes=4, grid_density=17)


def invariant_sweep(seed: int = 7, selection: Optional[Sequence[str]] = None) -> list:
    """check_invariants on every corpus family with the sweep settings."""
    out = []
    for e in CORPUS:
        if selection is not None and e.id not in selection:
            continue
        out.append(check_invariants(e.load().family, e.config(seed, **SWEEP_OVERRIDES), e.id))
    return out


def check_invariants(fam: FunctionFamily, cfg: DecoupleConfig, name: str = "", shift: float = 1.75, chain_tol: float = 1e-6) -> InvariantReport:
    """Run the inequality chain, the sandwich, quasi-versus-plain, firm => uniform
    and constant-shift checks on one family."""
    checks, violations, skipped = {}, [], []
    lam = lambda_estimate(fam, cfg)
    scan = lam.extra["scan"]
    inf_val, _, _ = inf_of_upper_sum(fam, cfg.region, cfg)
    tol = DEFAULT_TOL.tol(inf_val)
    prefix_lim = _chain_limit(fam, scan.inf_s, scan.positions, cfg.region, upper=False)
    prefix_sup = _chain_limit(fam, scan.inf_s, scan.positions, cfg.region, upper=True)
    slack = chain_tol + prefix_lim.radius

    def record(key, ok, detail):
        checks[key] = {"ok": bool(ok), **{k: _j(v) for k, v in detail.items()}}
        if not ok:
            violations.append(key)

    record("lambda<=liminf_prefix_inf", lam.value <= prefix_lim.value + slack, {"lambda": lam.value, "liminf": prefix_lim.value})
    record("liminf_prefix_inf<=inf_upper_sum", prefix_lim.value <= inf_val + slack, {"liminf": prefix_lim.value, "inf": inf_val})
    gap = delta_estimate(fam, cfg, scan)
    if lam.value == -INF:
        skipped.append("sandwich: lambda is -inf, lambda + delta undefined")
    else:
        s = lam.value + gap.value
        record("sandwich", prefix_lim.value - slack <= s <= prefix_sup.value + slack + prefix_sup.radius, {"lambda+delta": s})
    th = theta_estimate(fam, cfg)
    if lam.value > -INF and np.isfinite(th.value):
        record("theta>=inf-lambda", th.value + tol >= inf_val - lam.value, {"theta": th.value, "inf-lambda": inf_val - lam.value})
    else:
        skipped.append("theta>=inf-lambda: not all three finite")
    ql = quasi_lambda_estimate(fam, cfg)
    record("quasi_lambda>=lambda", ql.value >= lam.value - tol, {"quasi": ql.value, "plain": lam.value})
    qt = quasi_theta_estimate(fam, cfg)
    # both limits are extrapolated, so they are only resolved to the finest traced level
    res = max(_finest_level(th), _finest_level(qt))
    record("quasi_theta<=theta", qt.value <= th.value + DEFAULT_TOL.tol(th.value) + res, {"quasi": qt.value, "plain": th.value, "resolution": res})
    uni = certify_uniform_lsc(fam, cfg)
    firm = certify_firm_uniform_lsc(fam, cfg)
    record("firm=>uniform", not (firm.verdict == HOLDS and uni.verdict == FAILS), {"firm": firm.verdict, "uniform": uni.verdict})
    if fam.is_finite:
        shifted = fam.with_member(Const(shift), "c_shift")
        lam2 = lambda_estimate(shifted, cfg)
        if lam.value == -INF:
            ok = lam2.value == -INF
            err = 0.0 if ok else INF
        else:
            err = abs(lam2.value - lam.value - shift)
            ok = err <= 1e-9
        record("constant_shift_lambda", ok, {"error": err})
        th2 = theta_estimate(shifted, cfg)
        same = [r.value for r in th.trace] == [r.value for r in th2.trace]
        record("constant_shift_theta_trace", same, {})
    else:
        skipped.append("constant shift: checked on finite families")
    return InvariantReport(name, checks, violations, skipped)
