"""Estimators for the uniform infimum, the firm constant, the gap constant
and their quasi variants on a region of R^n.

All infimum-type outputs are upper bounds of the true infima (they come from
search); the firm constant is empirical evidence from an adversarial search.
The Estimate type records which direction a number can be trusted in.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .core import (
    DIVERGENCE_FLOOR,
    INF,
    Ball,
    Box,
    LimitResult,
    Region,
    TailMode,
    WholeSpace,
    directed_liminf,
    directed_limsup,
    extrapolate_to_zero,
    is_diverging,
    pairwise_max_dist,
    region_grid,
    region_sample,
)
from .functions.calculus import direction_grid
from .functions.expr import Const, Expr, SumOf
from .functions.family import FunctionFamily
from .search import compass_minimize, safe_sum, spawn, unit_ball_points

UPPER_BOUND_OF_INF = "UpperBoundOfInf"
LOWER_EVIDENCE_OF_SUP = "LowerEvidenceOfSup"
TWO_SIDED = "TwoSided"

CONVERGED = "Converged"
DIVERGING = "NegativeInfinityDiverging"
INCONCLUSIVE = "Inconclusive"

WITNESS_KS = tuple(sorted(set(range(1, 33)) | {2 ** j for j in range(21)}))


@dataclass
class DecoupleConfig:
    region: Region
    delta0: Optional[float] = None
    delta_ratio: float = 0.5
    delta_levels: int = 12
    multistarts: int = 64
    seed: int = 0
    grid_density: int = 33
    max_centers: int = 2048
    rho0: Optional[float] = None
    rho_levels: int = 4
    pattern_iters: int = 60
    ball_samples: int = 48
    refine_top: int = 8
    theta_rounds: int = 20
    inner_grid: int = 4096
    max_prefixes: int = 6
    witness_exponents: tuple = (6, 12, 18)
    divergence_floor: float = DIVERGENCE_FLOOR
    extrapolate_levels: int = 4

    def __post_init__(self):
        if not 0 < self.delta_ratio < 1:
            raise ValueError("delta_ratio must lie in (0, 1)")
        # keep the extrapolation window inside the finer half of the schedule;
        # coarse levels where the diameter bound is slack bias the fitted intercept
        if self.delta_levels < 2 * self.extrapolate_levels:
            raise ValueError(f"delta_levels must be at least {2 * self.extrapolate_levels}")
        if self.multistarts < 1 or self.grid_density < 2:
            raise ValueError("need at least one multistart and a grid density of 2")

    def deltas(self) -> list[float]:
        d0 = self.delta0 if self.delta0 is not None else self.region.scale_diam()
        return [d0 * self.delta_ratio ** j for j in range(self.delta_levels)]

    def rhos(self) -> list[float]:
        r0 = self.rho0 if self.rho0 is not None else self.region.scale_diam() / 8.0
        return [r0 * 0.5 ** j for j in range(self.rho_levels)]

    def with_region(self, region: Region) -> "DecoupleConfig":
        return replace(self, region=region)

    def echo(self) -> dict:
        from .dsl import region_text

        d = {k: v for k, v in asdict(self).items() if k != "region"}
        d["region"] = region_text(self.region)
        d["witness_exponents"] = list(self.witness_exponents)
        return d


@dataclass
class TraceRow:
    quantity: str
    s_size: int
    delta: Optional[float]
    rho: Optional[float]
    value: float


@dataclass
class Estimate:
    quantity: str
    value: float
    bound_direction: str
    verdict: str
    trace: list = field(default_factory=list)
    radius: float = 0.0
    witness: Optional[np.ndarray] = None
    notes: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "quantity": self.quantity,
            "value": _jnum(self.value),
            "bound_direction": self.bound_direction,
            "verdict": self.verdict,
            "radius": _jnum(self.radius),
            "witness": None if self.witness is None else np.asarray(self.witness).tolist(),
            "notes": list(self.notes),
            "trace": [
                {"s_size": r.s_size, "delta": r.delta, "rho": r.rho, "value": _jnum(r.value)} for r in self.trace
            ],
        }


def _jnum(v):
    if v is None:
        return None
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


# --------------------------------------------------------------------------
# inner minimisation


def _interval_of(region: Region, c: float, r: float):
    box = region.bounding_box()
    lo, hi = c - r, c + r
    if not isinstance(region, WholeSpace):
        lo, hi = max(lo, box.lo[0]), min(hi, box.hi[0])
    return lo, hi


def _exact_ball_inf(f: Expr, centers: np.ndarray, r: float, region: Region) -> np.ndarray:
    """Closed-form inf over B_r(c) n region where the node supports it, else nan."""
    C, n = centers.shape
    out = np.full(C, np.nan)
    if n == 1 and isinstance(region, (Box, Ball, WholeSpace)):
        for k in range(C):
            lo, hi = _interval_of(region, centers[k, 0], r)
            if lo > hi:
                out[k] = INF
                continue
            v = f.interval_inf(lo, hi)
            if v is not None:
                out[k] = v
        return out
    inside = region.interior_distance(centers) >= r
    for k in np.where(inside)[0]:
        v = f.ball_inf(centers[k], r)
        if v is not None:
            out[k] = v
    return out


def ball_minimize(f: Expr, centers: np.ndarray, r: float, region: Region, cfg: DecoupleConfig):
    """inf of f over B_r(c) n region for each center.

    Returns (values, argmin points, trend) with trend of shape (checkpoints, C).
    """
    C, n = centers.shape
    U = unit_ball_points(n, cfg.ball_samples)
    S = centers[:, None, :] + r * U[None, :, :]
    flat = S.reshape(-1, n)
    vals = f.values(flat)
    vals = np.where(region.contains(flat), vals, INF).reshape(C, -1)
    k = np.argmin(vals, axis=1)
    X0 = S[np.arange(C), k]

    exact = _exact_ball_inf(f, centers, r, region)
    have = ~np.isnan(exact)
    if have.all():
        # closed form everywhere; the sampled argmin only serves as a witness point
        v = exact
        return v, X0, np.broadcast_to(v, (3, C)).copy()

    def fun(X, rows):
        v = f.values(X)
        ok = region.contains(X) & (np.linalg.norm(X - centers[rows], axis=1) < r)
        return np.where(ok, v, INF)

    X, v, trend = compass_minimize(fun, X0, r / 4.0, iters=cfg.pattern_iters)
    v = np.where(have, np.minimum(exact, v), v)
    trend = np.where(have[None, :], np.minimum(exact[None, :], trend), trend)
    return v, X, trend


@dataclass
class DecoupledResult:
    value: float
    tuple: Optional[np.ndarray]
    trend: list
    notes: list = field(default_factory=list)


def _witness_tuples(family: FunctionFamily, S, ks=WITNESS_KS):
    """Candidate tuples built from the family's witness sequences, keyed by k."""
    if not family.witnesses:
        return []
    gens = [family.witnesses.get(t) for t in S]
    if all(g is None for g in gens):
        return []
    first = next(g for g in gens if g is not None)
    out = []
    for k in ks:
        try:
            pts = [np.asarray((g or first)(k), dtype=float) for g in gens]
        except (ZeroDivisionError, OverflowError, ValueError):
            continue
        P = np.stack(pts)
        if np.all(np.isfinite(P)):
            out.append((k, P))
    return out


def decoupled_inf(
    family: FunctionFamily,
    S,
    delta: float,
    cfg: DecoupleConfig,
    tuple_region: Optional[Region] = None,
    rng: Optional[np.random.Generator] = None,
) -> DecoupledResult:
    """Upper bound of inf { sum_{t in S} f_t(x_t) : diam{x_t} < delta, x_t in region }.

    Uses the center form: inf over centers x of sum_t inf over B_{delta/2}(x) n region.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    region = tuple_region if tuple_region is not None else cfg.region
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    fs = family.restrict(S)
    n = family.dim
    r = delta / 2.0
    grid = region_grid(region, cfg.grid_density, cfg.max_centers)
    extra = region_sample(region, cfg.multistarts, rng)
    seeds = [(k, P) for k, P in _witness_tuples(family, S) if region.contains(P).all()]
    seed_centers = [P[0] for _, P in seeds]
    centers = np.concatenate([grid, extra] + ([np.array(seed_centers)] if seed_centers else []))
    notes = []
    if centers.shape[0] == 0:
        return DecoupledResult(INF, None, [INF], ["empty feasible set"])

    def evaluate(cs):
        per = [ball_minimize(f, cs, r, region, cfg) for f in fs]
        total = safe_sum([p[0] for p in per])
        trend = safe_sum([p[2] for p in per])
        pts = np.stack([p[1] for p in per], axis=1)
        return total, trend, pts

    total, trend, pts = evaluate(centers)
    # one refinement round around the best centers
    top = np.argsort(total, kind="stable")[: cfg.refine_top]
    top = top[np.isfinite(total[top]) | (total[top] == -INF)]
    if top.size:
        offs = np.concatenate([np.eye(n), -np.eye(n)]) * (r / 2.0)
        cand = (centers[top][:, None, :] + offs[None]).reshape(-1, n)
        t2, tr2, p2 = evaluate(cand)
        centers = np.concatenate([centers, cand])
        total = np.concatenate([total, t2])
        trend = np.concatenate([trend, tr2], axis=1)
        pts = np.concatenate([pts, p2])
    # continuous refinement of the best centers; the grid alone misses corners.
    # Only when every member has a closed-form ball infimum there, otherwise the
    # nested compass searches cost too much for what they gain.
    top = np.argsort(total, kind="stable")[: cfg.refine_top]
    top = top[np.isfinite(total[top])]
    closed = top.size and all(not np.isnan(_exact_ball_inf(f, centers[top], r, region)).any() for f in fs)
    if closed:
        def center_fun(X, rows):
            return evaluate(X)[0]

        dirs = direction_grid(n) if n <= 3 else None
        Xc, _, _ = compass_minimize(center_fun, centers[top], r / 2.0, iters=max(cfg.pattern_iters // 4, 4), checkpoints=1, dirs=dirs)
        t3, tr3, p3 = evaluate(Xc)
        centers = np.concatenate([centers, Xc])
        total = np.concatenate([total, t3])
        trend = np.concatenate([trend, tr3], axis=1)
        pts = np.concatenate([pts, p3])
    best = int(np.argmin(total))
    value = float(total[best])
    best_tuple = pts[best]
    search_trend = [float(np.min(trend[j])) for j in range(trend.shape[0])]

    # witness seeds with diam < delta
    seed_vals = []
    for k, P in seeds:
        if pairwise_max_dist(P) < delta:
            v = float(safe_sum([f.values(P[i][None, :]) for i, f in enumerate(fs)])[0])
            seed_vals.append((k, v, P))
    if seed_vals:
        caps = [2 ** e for e in cfg.witness_exponents]
        for j in range(len(search_trend)):
            cap = caps[min(j, len(caps) - 1)]
            vs = [v for k, v, _ in seed_vals if k <= cap]
            if vs:
                search_trend[j] = min(search_trend[j], min(vs))
        kb = min(range(len(seed_vals)), key=lambda i: seed_vals[i][1])
        if seed_vals[kb][1] < value or not np.isfinite(value):
            if seed_vals[kb][1] < value:
                value = seed_vals[kb][1]
                best_tuple = seed_vals[kb][2]
    if value == -INF and seed_vals:
        # a finite, replayable witness beats the argmin of an exact -inf bound
        finite = [sv for sv in seed_vals if np.isfinite(sv[1])]
        if finite:
            best_tuple = min(finite, key=lambda sv: sv[1])[2]
    value = min(value, search_trend[-1]) if search_trend else value
    return DecoupledResult(value, best_tuple, search_trend, notes)


def plain_inf(fn: Callable[[np.ndarray], np.ndarray], region: Region, cfg: DecoupleConfig, rng, exact: Optional[float] = None):
    """Upper bound of inf fn over the region: grid, multistarts, compass refinement."""
    grid = region_grid(region, cfg.grid_density, cfg.max_centers)
    X = np.concatenate([grid, region_sample(region, cfg.multistarts, rng)])
    v = fn(X)
    order = np.argsort(v, kind="stable")[: max(cfg.refine_top, 1)]
    box = region.bounding_box()
    step = max(box.scale_diam(), 1e-9) / max(cfg.grid_density, 2)

    def fun(Y, rows):
        return np.where(region.contains(Y), fn(Y), INF)

    n = X.shape[1]
    dirs = direction_grid(n) if n <= 3 else None
    Xr, vr, trend = compass_minimize(fun, X[order], step, iters=cfg.pattern_iters, dirs=dirs)
    k = int(np.argmin(vr))
    value, arg = float(vr[k]), Xr[k]
    if float(v.min()) < value:
        value, arg = float(v.min()), X[int(np.argmin(v))]
    tr = [min(float(t.min()), float(v.min())) for t in trend]
    if exact is not None and exact < value:
        value = exact
        tr = [min(t, exact) for t in tr]
    return value, arg, tr


def _interval_exact_sum(fs: list, region: Region) -> Optional[float]:
    if fs and fs[0] is not None and isinstance(region, (Box, Ball)) and region.bounding_box().dim == 1:
        box = region.bounding_box()
        try:
            return SumOf(tuple(fs)).interval_inf(box.lo[0], box.hi[0])
        except Exception:
            return None
    return None


def inf_of_partial_sum(family: FunctionFamily, S, region: Region, cfg: DecoupleConfig, rng):
    # constant members are added after the search so inf(F + c) = inf(F) + c exactly
    keep, csum = _split_consts(family.restrict(S))
    core = [S[i] for i in keep]
    if not core:
        box = region.bounding_box()
        return csum, 0.5 * (box.lo_arr + box.hi_arr), None
    fs = family.restrict(core)
    v, arg, trend = plain_inf(lambda X: family.sum_over(core, X), region, cfg, rng, _interval_exact_sum(fs, region))
    return v + csum if csum else v, arg, trend


def inf_of_upper_sum(family: FunctionFamily, region: Region, cfg: DecoupleConfig, rng=None):
    if family.is_finite:
        # same stream as the single prefix of the lambda scan, so both agree exactly
        rng = rng if rng is not None else spawn(cfg.seed, 1)[0]
        return inf_of_partial_sum(family, family.enumeration(), region, cfg, rng)
    rng = rng if rng is not None else spawn(cfg.seed + 3, 1)[0]
    return plain_inf(family.upper_sum_values, region, cfg, rng)


# --------------------------------------------------------------------------
# chain bookkeeping


def _prefix_positions(family: FunctionFamily, cfg: DecoupleConfig) -> list[int]:
    L = len(family.chain())
    if L <= cfg.max_prefixes:
        return list(range(L))
    pos = np.unique(np.round(np.linspace(0, L - 1, cfg.max_prefixes)).astype(int))
    return [int(p) for p in pos]


def _chain_limit(family: FunctionFamily, values: list, positions: list, region: Region, upper: bool) -> LimitResult:
    r = float(np.max(np.linalg.norm(region.bounding_box().hi_arr[None, :] * np.array([[1], [-1]]), axis=1)))
    r = max(r, float(np.linalg.norm(region.bounding_box().lo_arr)))
    mode = family.tail_mode(r)
    if mode.kind == "tail_bounded":
        mode = TailMode("tail_bounded", lambda j: mode_bound(family, positions[j], r))
    f = directed_limsup if upper else directed_liminf
    return f(values, mode)


def mode_bound(family, pos, r):
    return family.tail_mode(r).bound(pos)


def _vanishing_limit(deltas, env, cfg) -> float:
    return extrapolate_to_zero(deltas, env, cfg.extrapolate_levels)


# --------------------------------------------------------------------------
# the uniform infimum


@dataclass
class _LambdaScan:
    positions: list
    sizes: list
    lam: list
    inf_s: list
    diverging: list
    witnesses: list
    trace: list
    notes: list


def _lambda_scan(family: FunctionFamily, cfg: DecoupleConfig, tuple_region: Optional[Region] = None, rho=None, inf_region=None) -> _LambdaScan:
    region = cfg.region
    tuple_region = tuple_region if tuple_region is not None else region
    inf_region = inf_region if inf_region is not None else region
    deltas = cfg.deltas()
    chain = family.chain()
    positions = _prefix_positions(family, cfg)
    rngs = spawn(cfg.seed, len(chain) * (len(deltas) + 1))
    out = _LambdaScan(positions, [], [], [], [], [], [], [])
    for p in positions:
        S_all = chain.prefixes[p]
        # constants shift every decoupled infimum by the same amount; keep them
        # out of the search and the extrapolation so the shift is exact
        keep, csum = _split_consts(family.restrict(S_all))
        S = [S_all[i] for i in keep]
        inf_core, arg, _ = inf_of_partial_sum(family, S, inf_region, cfg, rngs[p * (len(deltas) + 1)]) if S else (0.0, None, None)
        if not S:
            env, witness, div, lam = [0.0] * len(deltas), None, False, 0.0
        else:
            # the diagonal tuple at the plain minimiser is feasible for every delta
            diag = inf_core if bool(tuple_region.contains(arg[None, :])[0]) else INF
            vals, witness, trends = [], None, []
            for j, d in enumerate(deltas):
                res = decoupled_inf(family, S, d, cfg, tuple_region, rngs[p * (len(deltas) + 1) + 1 + j])
                if diag < res.value:
                    res.value = diag
                    res.tuple = np.repeat(arg[None, :], len(S), axis=0)
                vals.append(res.value)
                trends.append(res.trend)
                if res.tuple is not None:
                    witness = res.tuple
            env = list(np.minimum.accumulate(np.array(vals)[::-1])[::-1])
            div = is_diverging(trends[-1], cfg.divergence_floor) or env[-1] == -INF
            if div:
                lam = -INF
            else:
                span = abs(env[-1] - env[-min(len(env), cfg.extrapolate_levels)])
                lam = _vanishing_limit(deltas, env, cfg)
                lam = min(max(lam, env[-1]), env[-1] + span)
                lam = min(lam, max(inf_core, env[-1]))
        if witness is not None and len(S) < len(S_all):
            full = np.repeat(witness[:1], len(S_all), axis=0)
            full[keep] = witness
            witness = full
        for d, v in zip(deltas, env):
            out.trace.append(TraceRow("lambda", len(S_all), d, rho, float(v + csum)))
        out.sizes.append(len(S_all))
        out.lam.append(float(lam + csum))
        out.inf_s.append(float(inf_core + csum))
        out.diverging.append(bool(div))
        out.witnesses.append(witness)
    return out


def lambda_estimate(family: FunctionFamily, cfg: DecoupleConfig) -> Estimate:
    """Uniform infimum: liminf over the chain of the delta -> 0 limit of decoupled infima."""
    scan = _lambda_scan(family, cfg)
    return _lambda_from_scan(family, cfg, scan, "lambda")


def _lambda_from_scan(family, cfg, scan: _LambdaScan, name: str) -> Estimate:
    lim = _chain_limit(family, scan.lam, scan.positions, cfg.region, upper=False)
    if scan.diverging[-1]:
        verdict, value = DIVERGING, -INF
    elif lim.inconclusive:
        verdict, value = INCONCLUSIVE, lim.value
    else:
        verdict, value = CONVERGED, lim.value
    notes = list(scan.notes)
    if not family.is_finite:
        notes.append(f"chain limit over {len(scan.positions)} prefixes")
    est = Estimate(
        name,
        value,
        TWO_SIDED if lim.radius else UPPER_BOUND_OF_INF,
        verdict,
        scan.trace,
        radius=lim.radius,
        witness=scan.witnesses[-1],
        notes=notes,
    )
    est.extra["scan"] = scan
    return est


# --------------------------------------------------------------------------
# the firm constant


def _split_consts(fs: list):
    const = sum(float(f.c) for f in fs if isinstance(f, Const))
    keep = [i for i, f in enumerate(fs) if not isinstance(f, Const)]
    return keep, const


class _Inner:
    """inf over x of max{ max_t |x - x_t|, F(x) - base } for batches of tuples."""

    def __init__(self, F, inner_region: Region, cfg: DecoupleConfig, delta: float):
        self.F = F
        self.region = inner_region
        self.cfg = cfg
        self.delta = delta
        G = region_grid(inner_region, cfg.grid_density, cfg.inner_grid)
        FG = F(G) if G.shape[0] else np.zeros(0)
        fin = np.isfinite(FG)
        self.G, self.FG = G[fin], FG[fin]
        n = inner_region.bounding_box().dim
        self.U = unit_ball_points(n, cfg.ball_samples)
        box = inner_region.bounding_box()
        self.step = max(box.scale_diam(), 1e-9) / max(cfg.grid_density, 2)

    def __call__(self, P: np.ndarray, base: np.ndarray) -> np.ndarray:
        B, m, n = P.shape
        best = np.full(B, INF)
        bestx = P[:, 0, :].copy()
        if self.G.shape[0]:
            D = np.zeros((B, self.G.shape[0]))
            for t in range(m):
                D = np.maximum(D, np.linalg.norm(self.G[None, :, :] - P[:, t, None, :], axis=-1))
            with np.errstate(invalid="ignore"):
                V = np.maximum(D, self.FG[None, :] - base[:, None])
            k = np.argmin(V, axis=1)
            best = V[np.arange(B), k]
            bestx = self.G[k].copy()
        R = 10.0 * self.delta
        L = np.concatenate([P[:, :1, :] + R * self.U[None], P], axis=1)
        Lf = L.reshape(-1, n)
        FL = np.where(self.region.contains(Lf), self.F(Lf), INF).reshape(B, -1)
        DL = np.linalg.norm(L[:, :, None, :] - P[:, None, :, :], axis=-1).max(axis=-1)
        with np.errstate(invalid="ignore"):
            VL = np.maximum(DL, FL - base[:, None])
        VL = np.where(np.isnan(VL), INF, VL)
        k = np.argmin(VL, axis=1)
        vl = VL[np.arange(B), k]
        take = vl < best
        best = np.where(take, vl, best)
        bestx[take] = L[np.arange(B), k][take]

        def fun(X, rows):
            d = np.linalg.norm(X[:, None, :] - P[rows], axis=-1).max(axis=1)
            fx = np.where(self.region.contains(X), self.F(X), INF)
            with np.errstate(invalid="ignore"):
                v = np.maximum(d, fx - base[rows])
            return np.where(np.isnan(v), INF, v)

        step = np.maximum(np.minimum(self.step, R), 1e-12)
        _, vr, _ = compass_minimize(fun, bestx, step, iters=max(self.cfg.pattern_iters // 2, 10), checkpoints=1)
        return np.minimum(best, vr)


def _theta_level(
    family: FunctionFamily,
    S,
    idx: list,
    F,
    delta: float,
    tuple_region: Region,
    inner_region: Region,
    cfg: DecoupleConfig,
    rng: np.random.Generator,
    extra_seeds: Sequence = (),
):
    fs = [family.member(S[i]) for i in idx]
    m, n = len(fs), family.dim
    inner = _Inner(F, inner_region, cfg, delta)
    r = 0.4999 * delta
    B = cfg.multistarts

    def objective(P):
        fx = [fs[t].values(P[:, t, :]) for t in range(m)]
        ok = np.ones(P.shape[0], dtype=bool)
        for t in range(m):
            ok &= np.isfinite(fx[t]) & tuple_region.contains(P[:, t, :])
        ok &= pairwise_max_dist(P) < delta
        base = np.where(ok, np.sum([np.where(ok, v, 0.0) for v in fx], axis=0), 0.0)
        out = np.full(P.shape[0], -INF)
        if ok.any():
            out[ok] = inner(P[ok], base[ok])
        return out

    def unit_offsets(count):
        z = rng.standard_normal((count, m, n))
        z /= np.maximum(np.linalg.norm(z, axis=-1, keepdims=True), 1e-300)
        rad = rng.uniform(0, 1, size=(count, m, 1)) ** (1.0 / n)
        return z * rad

    pool = 4 * B
    c = region_sample(tuple_region, pool, rng)
    P = c[:, None, :] + r * unit_offsets(pool)
    vals = objective(P)
    seeds = []
    for k, W in _witness_tuples(family, S):
        seeds.append(W[idx])
    for W in extra_seeds:
        W = np.asarray(W, dtype=float)
        if W.shape == (len(S), n):
            seeds.append(W[idx])
    if seeds:
        SP = np.stack(seeds)
        sv = objective(SP)
        P = np.concatenate([SP, P])
        vals = np.concatenate([sv, vals])
    order = np.argsort(-vals, kind="stable")[:B]
    P, vals = P[order], vals[order]
    box = tuple_region.bounding_box()
    sigma0 = max(box.scale_diam() * 0.1, delta)
    for it in range(cfg.theta_rounds):
        sigma = max(sigma0 * 0.7 ** it, delta)
        c = P.mean(axis=1) + sigma * rng.standard_normal((B, n)) * (rng.uniform(size=(B, 1)) < 0.3)
        off = P - P.mean(axis=1, keepdims=True) + (delta / 4.0) * rng.standard_normal((B, m, n))
        nrm = np.linalg.norm(off, axis=-1, keepdims=True)
        off = np.where(nrm > r, off * (r / np.maximum(nrm, 1e-300)), off)
        Q = c[:, None, :] + off
        qv = objective(Q)
        better = qv > vals
        P[better] = Q[better]
        vals = np.where(better, qv, vals)
    k = int(np.argmax(vals))
    return float(vals[k]), P[k], bool(np.isfinite(vals[k]) or vals[k] == INF)


@dataclass
class _ThetaScan:
    positions: list
    sizes: list
    theta: list
    witnesses: list
    feasible: list
    trace: list
    level_values: list


def _theta_scan(
    family: FunctionFamily,
    cfg: DecoupleConfig,
    tuple_region: Optional[Region] = None,
    inner_region: Optional[Region] = None,
    use_upper_sum: bool = True,
    rho=None,
    extra_seeds: Sequence = (),
    name: str = "theta",
) -> _ThetaScan:
    region = cfg.region
    tuple_region = tuple_region if tuple_region is not None else region
    inner_region = inner_region if inner_region is not None else region
    deltas = cfg.deltas()
    chain = family.chain()
    positions = _prefix_positions(family, cfg)
    rngs = spawn(cfg.seed + 1, len(chain) * len(deltas))
    out = _ThetaScan(positions, [], [], [], [], [], [])
    for p in positions:
        S = chain.prefixes[p]
        fs = family.restrict(S)
        idx, _ = _split_consts(fs)
        if not idx:
            # constants only: both sums agree everywhere, x = x_t is optimal
            out.sizes.append(len(S))
            out.theta.append(0.0)
            out.witnesses.append(None)
            out.feasible.append(True)
            for d in deltas:
                out.trace.append(TraceRow(name, len(S), d, rho, 0.0))
            out.level_values.append([0.0] * len(deltas))
            continue
        keep_ids = [S[i] for i in idx]
        if use_upper_sum and not family.is_finite:
            # drop constants from the upper sum too; they cancel in the difference
            const_ids = [t for t in family.enumeration() if isinstance(family.member(t), Const)]
            F = _upper_sum_without(family, const_ids)
        else:
            F = lambda X, keep_ids=keep_ids: family.sum_over(keep_ids, X)
        vals, wit, feas = [], None, False
        for j, d in enumerate(deltas):
            v, W, ok = _theta_level(family, S, idx, F, d, tuple_region, inner_region, cfg, rngs[p * len(deltas) + j], extra_seeds)
            vals.append(v)
            feas |= ok
            if np.isfinite(v) and (wit is None or v >= 0):
                wit = W
        arr = np.array(vals)
        env = np.maximum.accumulate(arr[::-1])[::-1]
        for d, v in zip(deltas, env):
            out.trace.append(TraceRow(name, len(S), d, rho, float(v)))
        if not np.isfinite(env[-1]):
            th = float(env[-1]) if env[-1] == INF else 0.0
        else:
            th = _vanishing_limit(deltas, list(env), cfg)
            th = min(max(th, 0.0), float(env[-1]))
        out.sizes.append(len(S))
        out.theta.append(float(th))
        out.witnesses.append(wit)
        out.feasible.append(feas)
        out.level_values.append([float(v) for v in env])
    return out


def _upper_sum_without(family: FunctionFamily, drop):
    def F(X):
        X = np.atleast_2d(X)
        acc = np.zeros(X.shape[0])
        prefix = []
        for t in family.enumeration():
            if t not in drop:
                acc = acc + family.member(t).values(X)
            prefix.append(acc.copy())
        P = np.array(prefix)
        if family.tail_kind == "monotone":
            return P.max(axis=0)
        if family.tail_kind == "unknown":
            return P[len(P) // 2:].max(axis=0)
        return P[-1]

    return F


def theta_estimate(family: FunctionFamily, cfg: DecoupleConfig, extra_seeds: Sequence = ()) -> Estimate:
    """Firm constant: adversarial sup over near tuples of the coupled inner infimum."""
    scan = _theta_scan(family, cfg, extra_seeds=extra_seeds)
    return _theta_from_scan(family, cfg, scan, "theta")


def _theta_from_scan(family, cfg, scan: _ThetaScan, name: str) -> Estimate:
    lim = _chain_limit(family, scan.theta, scan.positions, cfg.region, upper=True)
    notes = ["empirical: adversarial search evidence, not a certified bound"]
    if not family.is_finite:
        notes.append("delta-limit taken per prefix before the chain limit")
    if not any(scan.feasible):
        est = Estimate(name, 0.0, LOWER_EVIDENCE_OF_SUP, INCONCLUSIVE, scan.trace, notes=notes + ["no dom-feasible tuple found"])
    else:
        verdict = INCONCLUSIVE if lim.inconclusive else CONVERGED
        est = Estimate(name, lim.value, LOWER_EVIDENCE_OF_SUP, verdict, scan.trace, radius=lim.radius, witness=scan.witnesses[-1], notes=notes)
    est.extra["scan"] = scan
    return est


def theta_inner_at(family: FunctionFamily, tup, cfg: DecoupleConfig, inner_region: Optional[Region] = None, delta: Optional[float] = None) -> float:
    """The coupled inner infimum for one given tuple (one x_t per member)."""
    P = np.atleast_2d(np.asarray(tup, dtype=float))[None, :, :]
    fs = family.members if family.is_finite else family.restrict(family.enumeration())
    idx, _ = _split_consts(fs)
    base = np.sum([fs[i].values(P[:, i, :]) for i in idx], axis=0)
    ids = [family.enumeration()[i] for i in idx]
    F = lambda X: family.sum_over(ids, X)
    d = delta if delta is not None else float(pairwise_max_dist(P[0])) or 1e-3
    inner = _Inner(F, inner_region if inner_region is not None else cfg.region, cfg, d)
    return float(inner(P[:, idx, :], base)[0])


# --------------------------------------------------------------------------
# the gap constant


def delta_estimate(family: FunctionFamily, cfg: DecoupleConfig, scan: Optional[_LambdaScan] = None) -> Estimate:
    """Gap constant: limsup over the chain of (inf sum_S - Lambda_S)."""
    scan = scan if scan is not None else _lambda_scan(family, cfg)
    gaps = []
    for inf_s, lam in zip(scan.inf_s, scan.lam):
        gaps.append(INF if lam == -INF else inf_s - lam)
    lim = _chain_limit(family, gaps, scan.positions, cfg.region, upper=True)
    trace = [TraceRow("delta", s, None, None, g) for s, g in zip(scan.sizes, gaps)]
    verdict = INCONCLUSIVE if lim.inconclusive else CONVERGED
    notes = ["+inf: the partial uniform infima diverge"] if lim.value == INF else []
    return Estimate("delta", lim.value, TWO_SIDED, verdict, trace, radius=lim.radius, notes=notes)


# --------------------------------------------------------------------------
# quasi variants


def _v_regions(cfg: DecoupleConfig):
    out = []
    for rho in cfg.rhos():
        V = cfg.region.shrink(rho)
        out.append((rho, V))
    return out


def quasi_lambda_estimate(family: FunctionFamily, cfg: DecoupleConfig) -> Estimate:
    """inf over rho of the uniform infimum with tuples restricted to V_rho."""
    best, best_scan, trace, notes = None, None, [], []
    for rho, V in _v_regions(cfg):
        if V is None:
            notes.append(f"V_rho empty at rho={rho:g}; level skipped")
            continue
        scan = _lambda_scan(family, cfg, tuple_region=V, rho=rho)
        trace.extend(scan.trace)
        est = _lambda_from_scan(family, cfg, scan, "quasi_lambda")
        if best is None or est.value < best.value:
            best, best_scan = est, scan
    if best is None:
        return Estimate("quasi_lambda", INF, UPPER_BOUND_OF_INF, INCONCLUSIVE, trace, notes=notes)
    best.trace = trace
    best.notes = notes + best.notes
    return best


def quasi_theta_estimate(family: FunctionFamily, cfg: DecoupleConfig) -> Estimate:
    """sup over rho of the firm constant with tuples in V_rho and x in the region."""
    best, trace, notes = None, [], []
    for rho, V in _v_regions(cfg):
        if V is None:
            notes.append(f"V_rho empty at rho={rho:g}; level skipped")
            continue
        scan = _theta_scan(family, cfg, tuple_region=V, rho=rho, name="quasi_theta")
        trace.extend(scan.trace)
        est = _theta_from_scan(family, cfg, scan, "quasi_theta")
        if best is None or est.value > best.value:
            best = est
    if best is None:
        return Estimate("quasi_theta", 0.0, LOWER_EVIDENCE_OF_SUP, INCONCLUSIVE, trace, notes=notes)
    best.trace = trace
    best.notes = notes + best.notes
    return best


def quasi_theta_unrestricted(family: FunctionFamily, cfg: DecoupleConfig, outer: Region) -> Estimate:
    """Quasi firm constant with the inner point ranging over ``outer`` instead of the region."""
    best, trace = None, []
    for rho, V in _v_regions(cfg):
        if V is None:
            continue
        scan = _theta_scan(family, cfg, tuple_region=V, inner_region=outer, rho=rho, name="quasi_theta_x")
        trace.extend(scan.trace)
        est = _theta_from_scan(family, cfg, scan, "quasi_theta_x")
        if best is None or est.value > best.value:
            best = est
    if best is None:
        return Estimate("quasi_theta_x", 0.0, LOWER_EVIDENCE_OF_SUP, INCONCLUSIVE, trace)
    best.trace = trace
    return best


def quasi_delta_estimate(family: FunctionFamily, cfg: DecoupleConfig) -> Estimate:
    """sup over rho of limsup over the chain of (inf_U sum_S - Lambda_{V_rho}(S))."""
    best, trace, notes = None, [], []
    for rho, V in _v_regions(cfg):
        if V is None:
            notes.append(f"V_rho empty at rho={rho:g}; level skipped")
            continue
        scan = _lambda_scan(family, cfg, tuple_region=V, rho=rho)
        est = delta_estimate(family, cfg, scan)
        for row in est.trace:
            row.rho = rho
        trace.extend(est.trace)
        if best is None or est.value > best.value:
            best = est
    if best is None:
        return Estimate("quasi_delta", 0.0, TWO_SIDED, INCONCLUSIVE, trace, notes=notes)
    best.quantity = "quasi_delta"
    best.trace = trace
    best.notes = notes + best.notes
    return best


def theta_UV_estimate(family: FunctionFamily, U: Region, V: Region, cfg: DecoupleConfig) -> Estimate:
    """Two-set firm constant: tuples in V, inner point in U, partial sums only."""
    c = cfg.with_region(U)
    scan = _theta_scan(family, c, tuple_region=V, inner_region=U, use_upper_sum=False, name="theta_UV")
    return _theta_from_scan(family, c, scan, "theta_UV")
