"""Three-valued certificates for the semicontinuity and stability properties.

Every verdict is numerical evidence with a stated direction: Holds means the
estimators failed to separate the two sides beyond ``tol``; Fails means a
separation beyond ``margin`` was found and comes with a replayable witness.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .core import INF, Ball, Box, Region, WholeSpace, directed_liminf, extrapolate_to_zero, is_diverging
from .decouple import (
    DIVERGING,
    DecoupleConfig,
    Estimate,
    _chain_limit,
    _lambda_scan,
    _prefix_positions,
    _theta_scan,
    _theta_from_scan,
    ball_minimize,
    delta_estimate,
    inf_of_partial_sum,
    inf_of_upper_sum,
    lambda_estimate,
    quasi_lambda_estimate,
    quasi_theta_estimate,
    quasi_theta_unrestricted,
    theta_estimate,
)
from .functions.expr import Const, Expr, SumOf
from .functions.family import FunctionFamily
from .search import spawn

HOLDS = "Holds"
FAILS = "Fails"
INCONCLUSIVE = "Inconclusive"

PROPERTIES = (
    "UniformLSC",
    "FirmUniformLSC",
    "QuasiUniformLSC",
    "FirmQuasiUniformLSC",
    "WeakDeltaLeqZero",
    "WeakFirm",
    "InfStable",
    "InfQuasiStable",
    "JointLSC",
    "InfCompactSufficient",
)


@dataclass
class Tolerance:
    rel: float = 1e-4
    margin_factor: float = 10.0

    def tol(self, scale: float) -> float:
        s = abs(scale) if np.isfinite(scale) else 0.0
        return self.rel * (1.0 + s)

    def margin(self, scale: float) -> float:
        return self.margin_factor * self.tol(scale)


DEFAULT_TOL = Tolerance()


@dataclass
class Certificate:
    property: str
    verdict: str
    witness: Optional[object] = None
    evidence: dict = field(default_factory=dict)
    estimates: list = field(default_factory=list)
    empirical: bool = False
    notes: list = field(default_factory=list)

    def __post_init__(self):
        if self.property not in PROPERTIES:
            raise ValueError(f"unknown property {self.property}")
        if self.verdict == FAILS and self.witness is None:
            raise ValueError("a Fails verdict needs a witness")

    def to_json(self) -> dict:
        w = self.witness
        if isinstance(w, np.ndarray):
            w = w.tolist()
        elif isinstance(w, (list, tuple)):
            w = [str(t) if not isinstance(t, (int, float)) else t for t in w]
        return {
            "property": self.property,
            "verdict": self.verdict,
            "witness": w,
            "empirical": self.empirical,
            "evidence": {k: _num(v) for k, v in self.evidence.items()},
            "estimates": [e.to_json() for e in self.estimates],
            "notes": list(self.notes),
        }


def _num(v):
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, float, np.floating, np.integer)):
        v = float(v)
        if np.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(v, np.ndarray):
        return v.tolist()
    return v


def light_config(region: Region, seed: int = 0) -> DecoupleConfig:
    """Reduced budget used when a certificate is a precondition of another routine."""
    return DecoupleConfig(region=region, seed=seed, delta_levels=8, multistarts=16, grid_density=17, theta_rounds=8, max_prefixes=4)


def _tol_note(tol, margin):
    return f"tol={tol:.3g}, margin={margin:.3g} (tol = rel*(1+|scale|), margin = factor*tol)"


# --------------------------------------------------------------------------
# uniform and firm uniform


def certify_uniform_lsc(family: FunctionFamily, cfg: DecoupleConfig, tolerance: Tolerance = DEFAULT_TOL) -> Certificate:
    inf_val, arg, _ = inf_of_upper_sum(family, cfg.region, cfg)
    lam = lambda_estimate(family, cfg)
    return _uniform_verdict("UniformLSC", inf_val, lam, tolerance)


def _uniform_verdict(prop, inf_val, lam: Estimate, tolerance: Tolerance) -> Certificate:
    tol, margin = tolerance.tol(inf_val), tolerance.margin(inf_val)
    ev = {"inf": inf_val, "lambda": lam.value, "tol": tol, "margin": margin}
    notes = [_tol_note(tol, margin)]
    if not np.isfinite(inf_val) and inf_val > 0:
        return Certificate(prop, INCONCLUSIVE, None, ev, [lam], notes=notes + ["empty domain"])
    if inf_val <= lam.value + tol:
        return Certificate(prop, HOLDS, None, ev, [lam], notes=notes)
    if lam.value < inf_val - margin:
        w = lam.witness if lam.witness is not None else np.array([])
        return Certificate(prop, FAILS, np.asarray(w), ev, [lam], notes=notes)
    return Certificate(prop, INCONCLUSIVE, None, ev, [lam], notes=notes)


def _firm_verdict(prop, th: Estimate, scale: float, tolerance: Tolerance) -> Certificate:
    tol, margin = tolerance.tol(scale), tolerance.margin(scale)
    scan = th.extra.get("scan")
    ev = {"theta": th.value, "tol": tol, "margin": margin}
    notes = [_tol_note(tol, margin), "empirical: Holds means the adversarial search found no evidence above tol"]
    if th.verdict == INCONCLUSIVE and scan is not None and not any(scan.feasible):
        return Certificate(prop, INCONCLUSIVE, None, ev, [th], empirical=True, notes=notes)
    per_s = scan.theta if scan is not None else [th.value]
    ev["theta_per_prefix_max"] = max(per_s)
    if max(per_s) <= tol and th.value <= tol:
        return Certificate(prop, HOLDS, None, ev, [th], empirical=True, notes=notes)
    if scan is not None:
        last = scan.level_values[-1]
        k = max(2, len(last) // 3)
        persistent = all(v >= margin for v in last[-k:])
    else:
        persistent = True
    ev["persistent"] = persistent
    if th.value >= margin and persistent and th.witness is not None:
        return Certificate(prop, FAILS, np.asarray(th.witness), ev, [th], empirical=True, notes=notes)
    return Certificate(prop, INCONCLUSIVE, None, ev, [th], empirical=True, notes=notes)


def certify_firm_uniform_lsc(family: FunctionFamily, cfg: DecoupleConfig, tolerance: Tolerance = DEFAULT_TOL, extra_seeds=()) -> Certificate:
    th = theta_estimate(family, cfg, extra_seeds=extra_seeds)
    inf_val, _, _ = inf_of_upper_sum(family, cfg.region, cfg)
    return _firm_verdict("FirmUniformLSC", th, inf_val, tolerance)


# --------------------------------------------------------------------------
# quasi variants


def certify_quasi_uniform_lsc(family: FunctionFamily, cfg: DecoupleConfig, tolerance: Tolerance = DEFAULT_TOL) -> Certificate:
    inf_val, _, _ = inf_of_upper_sum(family, cfg.region, cfg)
    lam = quasi_lambda_estimate(family, cfg)
    return _uniform_verdict("QuasiUniformLSC", inf_val, lam, tolerance)


def _expanded(region: Region, pad: float) -> Region:
    box = region.bounding_box()
    return WholeSpace(Box(tuple(np.array(box.lo) - pad), tuple(np.array(box.hi) + pad)))


def certify_firm_quasi_uniform_lsc(family: FunctionFamily, cfg: DecoupleConfig, tolerance: Tolerance = DEFAULT_TOL) -> Certificate:
    """Firm quasi certificate with the unrestricted inner point as a cross-check."""
    th = quasi_theta_estimate(family, cfg)
    inf_val, _, _ = inf_of_upper_sum(family, cfg.region, cfg)
    cert = _firm_verdict("FirmQuasiUniformLSC", th, inf_val, tolerance)
    outer = _expanded(cfg.region, cfg.region.scale_diam() / 4)
    alt = quasi_theta_unrestricted(family, cfg, outer)
    cert.evidence["theta_unrestricted_inner"] = alt.value
    tol = tolerance.tol(inf_val)
    agree = (alt.value <= tol) == (th.value <= tol)
    cert.evidence["unrestricted_agrees"] = agree
    if not agree:
        cert.notes.append("restricted and unrestricted inner searches disagree; estimator-quality alarm")
    cert.estimates.append(alt)
    return cert


# --------------------------------------------------------------------------
# weak properties


def certify_weak_delta(family: FunctionFamily, cfg: DecoupleConfig, tolerance: Tolerance = DEFAULT_TOL) -> Certificate:
    d = delta_estimate(family, cfg)
    scan_inf = max((abs(v) for v in d.extra.get("inf_s", [])), default=0.0)
    tol, margin = tolerance.tol(scan_inf), tolerance.margin(scan_inf)
    ev = {"delta": d.value, "tol": tol, "margin": margin}
    if d.value <= tol:
        return Certificate("WeakDeltaLeqZero", HOLDS, None, ev, [d])
    if d.value >= margin:
        return Certificate("WeakDeltaLeqZero", FAILS, list(family.enumeration()), ev, [d])
    return Certificate("WeakDeltaLeqZero", INCONCLUSIVE, None, ev, [d])


def certify_weak_firm(family: FunctionFamily, cfg: DecoupleConfig, tolerance: Tolerance = DEFAULT_TOL) -> Certificate:
    """limsup over the chain of the firm constants of the finite subfamilies."""
    scan = _theta_scan(family, cfg, use_upper_sum=False, name="theta_finite")
    th = _theta_from_scan(family, cfg, scan, "theta_finite")
    inf_val, _, _ = inf_of_upper_sum(family, cfg.region, cfg)
    cert = _firm_verdict("WeakFirm", th, inf_val, tolerance)
    return cert


# --------------------------------------------------------------------------
# inf-stability


def _prefix_infs(family: FunctionFamily, cfg: DecoupleConfig, region: Region):
    chain = family.chain()
    positions = _prefix_positions(family, cfg)
    rngs = spawn(cfg.seed + 2, len(chain))
    vals = []
    for p in positions:
        v, _, _ = inf_of_partial_sum(family, chain.prefixes[p], region, cfg, rngs[p])
        vals.append(v)
    return positions, vals


def certify_inf_stability(family: FunctionFamily, cfg: DecoupleConfig, tolerance: Tolerance = DEFAULT_TOL) -> Certificate:
    lhs, _, _ = inf_of_upper_sum(family, cfg.region, cfg)
    tol, margin = tolerance.tol(lhs), tolerance.margin(lhs)
    ev = {"inf_upper_sum": lhs, "tol": tol, "margin": margin}
    if family.is_finite:
        ev["liminf_prefix_infs"] = lhs
        return Certificate("InfStable", HOLDS, None, ev, notes=["finite index set: both sides coincide"])
    positions, vals = _prefix_infs(family, cfg, cfg.region)
    lim = _chain_limit(family, vals, positions, cfg.region, upper=False)
    ev["liminf_prefix_infs"] = lim.value
    ev["radius"] = lim.radius
    if lhs <= lim.value + tol + lim.radius:
        return Certificate("InfStable", HOLDS, None, ev)
    if lhs > lim.value + margin + lim.radius and not lim.inconclusive:
        return Certificate("InfStable", FAILS, list(family.chain().prefixes[positions[-1]]), ev)
    return Certificate("InfStable", INCONCLUSIVE, None, ev)


def certify_inf_quasi_stability(family: FunctionFamily, cfg: DecoupleConfig, tolerance: Tolerance = DEFAULT_TOL) -> Certificate:
    lhs, _, _ = inf_of_upper_sum(family, cfg.region, cfg)
    tol, margin = tolerance.tol(lhs), tolerance.margin(lhs)
    best = INF
    radius = 0.0
    incon = False
    for rho in cfg.rhos():
        V = cfg.region.shrink(rho)
        if V is None:
            continue
        positions, vals = _prefix_infs(family, cfg, V)
        lim = _chain_limit(family, vals, positions, cfg.region, upper=False)
        if lim.value < best:
            best, radius, incon = lim.value, lim.radius, lim.inconclusive
    ev = {"inf_upper_sum": lhs, "inf_over_rho_liminf": best, "tol": tol, "margin": margin}
    if lhs <= best + tol + radius:
        return Certificate("InfQuasiStable", HOLDS, None, ev)
    if lhs > best + margin + radius and not incon:
        return Certificate("InfQuasiStable", FAILS, list(family.enumeration()), ev)
    return Certificate("InfQuasiStable", INCONCLUSIVE, None, ev)


def check_characterization(family: FunctionFamily, cfg: DecoupleConfig, tolerance: Tolerance = DEFAULT_TOL) -> dict:
    """Cross-validate the uniform certificate against (gap <= 0 and inf-stable)."""
    uni = certify_uniform_lsc(family, cfg, tolerance)
    lam = uni.estimates[0]
    gap = delta_estimate(family, cfg, lam.extra["scan"])
    stab = certify_inf_stability(family, cfg, tolerance)
    tol = uni.evidence["tol"]
    rhs = gap.value <= tol and stab.verdict == HOLDS
    decided = uni.verdict != INCONCLUSIVE and stab.verdict != INCONCLUSIVE
    agree = (uni.verdict == HOLDS) == rhs if decided else True
    return {
        "uniform": uni.verdict,
        "delta": gap.value,
        "inf_stable": stab.verdict,
        "agree": bool(agree),
        "alarm": not agree,
    }


# --------------------------------------------------------------------------
# joint lower semicontinuity


def check_joint_lsc(family: FunctionFamily, xbar, cfg: DecoupleConfig, tolerance: Tolerance = DEFAULT_TOL) -> Certificate:
    """inf over delta of the chain limit of sum_S (f_t(xbar) - inf over B_delta(xbar) of f_t)."""
    xbar = np.atleast_1d(np.asarray(xbar, dtype=float))
    region = cfg.region
    chain = family.chain()
    positions = _prefix_positions(family, cfg)
    enum = family.enumeration()
    levels = []
    for d in cfg.deltas():
        dips = []
        for t in enum:
            f = family.member(t)
            v, _, _ = ball_minimize(f, xbar[None, :], d, region, cfg)
            fx = f(xbar)
            dips.append(max(fx - float(v[0]), 0.0) if np.isfinite(fx) else INF)
        cum = np.cumsum(dips)
        vals = [float(cum[len(chain.prefixes[p]) - 1]) for p in positions]
        lim = directed_liminf(vals, family.tail_mode()) if family.is_finite else _upper_chain(family, vals, positions, region)
        levels.append(lim)
    values = [lv.value for lv in levels]
    # dips shrink with delta, so the limit lies in [0, min]; extrapolate the tail
    if np.all(np.isfinite(values)):
        best = float(np.clip(extrapolate_to_zero(cfg.deltas(), values, cfg.extrapolate_levels), 0.0, np.min(values)))
    else:
        best = float(np.min(values))
    scale = float(family.upper_sum_values(xbar[None])[0])
    tol, margin = tolerance.tol(scale), tolerance.margin(scale)
    ev = {"value": best, "tol": tol, "margin": margin, "levels": np.array(values)}
    if best <= tol:
        return Certificate("JointLSC", HOLDS, None, ev)
    if all(v >= margin for v in values):
        return Certificate("JointLSC", FAILS, [str(t) for t in enum], ev)
    return Certificate("JointLSC", INCONCLUSIVE, None, ev)


def _upper_chain(family, vals, positions, region):
    # sums of nonnegative dips grow along the chain: the limit is the supremum
    from .core import LimitResult

    return LimitResult(float(max(vals)), 0.0, family.tail_kind == "unknown" and vals[-1] > vals[0])


# --------------------------------------------------------------------------
# inf-compactness sufficient condition


def check_inf_compact_sufficient(family: FunctionFamily, t0, cfg: DecoupleConfig, tolerance: Tolerance = DEFAULT_TOL) -> Certificate:
    """Bounded sublevel sets of f_t0 inside the region and a finite uniform
    infimum of the remaining functions support uniform lsc and inf-stability."""
    from .core import region_grid

    f0 = family.member(t0)
    box = cfg.region.bounding_box()
    G = region_grid(cfg.region, cfg.grid_density, 40000)
    vals = f0.values(G)
    fin = np.isfinite(vals)
    ev = {}
    notes = []
    bounded = False
    if fin.any():
        lo_v, med = float(vals[fin].min()), float(np.median(vals[fin]))
        mesh = box.scale_diam() / max(cfg.grid_density - 1, 1)
        dist_to_edge = np.minimum(G - box.lo_arr[None], box.hi_arr[None] - G).min(axis=1)
        bounded = med > lo_v
        for j in (1, 2, 3):
            c = lo_v + (med - lo_v) * j / 3
            level = vals <= c
            if level.any() and dist_to_edge[level].min() < 2 * mesh:
                bounded = False
        ev["levels_bounded"] = bounded
    if not bounded:
        notes.append("sublevel sets of the chosen function reach the region boundary")
    rest_ids = [t for t in family.enumeration() if t != t0]
    finite_rest = True
    if rest_ids and family.is_finite:
        rest = FunctionFamily(dim=family.dim, members=[family.member(t) for t in rest_ids], ids=rest_ids, witnesses=dict(family.witnesses))
        lam = lambda_estimate(rest, cfg)
        finite_rest = lam.verdict != DIVERGING
        ev["lambda_rest"] = lam.value
    elif not family.is_finite:
        notes.append("countable family: the remaining uniform infimum is not scanned")
        finite_rest = False
    ev["lambda_rest_finite"] = finite_rest
    ev["supports"] = "uniform_lsc,inf_stability" if bounded and finite_rest else ""
    if bounded and finite_rest:
        return Certificate("InfCompactSufficient", HOLDS, None, ev, notes=notes)
    return Certificate("InfCompactSufficient", INCONCLUSIVE, None, ev, notes=notes + ["hypotheses not verified; a sufficient condition never yields Fails"])


# --------------------------------------------------------------------------
# perturbations


def perturb(family: FunctionFamily, t0, g: Expr) -> FunctionFamily:
    """f_t0 + g; a constant perturbation is added as its own member, which has the same sum."""
    if isinstance(g, Const):
        return family.with_member(g, "c0" if family.is_finite and "c0" not in family.ids else "c0_")
    return family.replace_member(t0, SumOf((family.member(t0), g)))


def perturbation_stability_test(family: FunctionFamily, t0, g: Expr, cfg: DecoupleConfig, quasi: bool = False, tolerance: Tolerance = DEFAULT_TOL) -> dict:
    cert = certify_firm_quasi_uniform_lsc if quasi else certify_firm_uniform_lsc
    before = cert(family, cfg, tolerance)
    after = cert(perturb(family, t0, g), cfg, tolerance)
    tb = [r.value for r in before.estimates[0].trace]
    ta = [r.value for r in after.estimates[0].trace]
    return {
        "before": before.verdict,
        "after": after.verdict,
        "degraded": before.verdict == HOLDS and after.verdict == FAILS,
        "identical_trace": tb == ta,
        "certificates": (before, after),
    }
