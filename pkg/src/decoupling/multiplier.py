"""Fuzzy multiplier rule search and fuzzy subdifferential sum rule on R^n.

The pipeline: pick a finite index set with controlled tail, build the
penalized decoupled objective, take a grid Ekeland point of it, and measure
how far zero (or x*) is from the Minkowski sum of subdifferentials there.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import INF, Ball, as_point, region_grid
from .functions.calculus import ExactnessUnavailable, exact_subdifferential, frechet_membership_test
from .functions.expr import Affine, Blackbox, DistancePenalty, Expr, SumOf
from .functions.family import FunctionFamily
from .functions.sets import AxisNormalCone, BoxSet, DualSet, SinglePoint
from .varprinciple import ParameterRegimeTooCoarse, ball_grid, build_penalized, ekeland_step_on_product


class CertificateMissing(RuntimeError):
    pass


class TailUncontrolled(RuntimeError):
    pass


# --------------------------------------------------------------------------
# distance to a Minkowski sum


@dataclass
class MinkowskiDistance:
    distance: float
    decomposition: np.ndarray
    exact: bool
    sweeps: int = 0


def _axis_bounds(s: DualSet):
    lo, hi = s.bounds()
    return np.asarray(lo, float), np.asarray(hi, float)


def _separable_distance(target: np.ndarray, atoms: list) -> MinkowskiDistance:
    n = target.size
    bounds = [_axis_bounds(a) for a in atoms]
    L = np.sum([b[0] for b in bounds], axis=0)
    H = np.sum([b[1] for b in bounds], axis=0)
    v = np.clip(target, L, H)
    G = np.array([np.clip(np.zeros(n), lo, hi) for lo, hi in bounds])
    for j in range(n):
        need = v[j] - G[:, j].sum()
        for i, (lo, hi) in enumerate(bounds):
            if need == 0:
                break
            room = (hi[j] - G[i, j]) if need > 0 else (lo[j] - G[i, j])
            step = min(need, room) if need > 0 else max(need, room)
            G[i, j] += step
            need -= step
    dist = float(np.linalg.norm(target - G.sum(axis=0)))
    return MinkowskiDistance(dist, G, True, 0)


def distance_to_minkowski_sum(target, sets: Sequence[DualSet], tol: float = 1e-9, max_sweeps: int = 10_000) -> MinkowskiDistance:
    """dist(target, C_1 + ... + C_k) with a decomposition g_i in C_i.

    Exact per-axis when every atom is a point, box or axis cone; otherwise
    block-cyclic projection g_i <- P_{C_i}(target - sum_{j != i} g_j).
    """
    target = np.atleast_1d(np.asarray(target, dtype=float))
    atoms = []
    for s in sets:
        atoms.extend(s.atoms())
    if not atoms:
        return MinkowskiDistance(float(np.linalg.norm(target)), np.zeros((0, target.size)), True)
    if all(a.axis_separable for a in atoms):
        return _separable_distance(target, atoms)
    k = len(atoms)
    G = np.array([a.project(target / k) for a in atoms], dtype=float)
    prev = INF
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        for i, a in enumerate(atoms):
            rest = G.sum(axis=0) - G[i]
            G[i] = a.project(target - rest)
        res = float(np.linalg.norm(target - G.sum(axis=0)))
        if abs(prev - res) <= tol * max(1.0, res) and sweeps > 1:
            return MinkowskiDistance(res, G, False, sweeps)
        prev = res
    return MinkowskiDistance(prev, G, False, sweeps)


# --------------------------------------------------------------------------
# the diameter-penalty subgradient property


def diam_function(m: int, n: int, gamma: float = 1.0) -> Blackbox:
    def fn(z):
        U = np.asarray(z, float).reshape(m, n)
        d = np.linalg.norm(U[:, None, :] - U[None, :, :], axis=-1)
        return gamma * float(d.max())

    return Blackbox(fn, convex=True, lip=2 * gamma, name="diam")


def anchored_max_function(anchor: np.ndarray, scale: float) -> Blackbox:
    m, n = anchor.shape

    def fn(z):
        U = np.asarray(z, float).reshape(m, n)
        return scale * float(np.linalg.norm(U - anchor, axis=1).max())

    return Blackbox(fn, convex=True, lip=scale, name="anchored_max")


@dataclass
class PropertyReport:
    trials: int
    certified_refuted: int
    violators_missed: int
    max_sum_norm: float
    max_anchor_excess: float = -INF
    failures: list = field(default_factory=list)

    @property
    def sound(self) -> bool:
        return self.certified_refuted == 0 and self.violators_missed == 0


def _diam_subgradient(U: np.ndarray, gamma: float) -> np.ndarray:
    """A Frechet subgradient of gamma*diam at a tuple with a unique farthest pair."""
    m, n = U.shape
    d = np.linalg.norm(U[:, None, :] - U[None, :, :], axis=-1)
    i, j = np.unravel_index(int(np.argmax(d)), d.shape)
    G = np.zeros((m, n))
    e = (U[i] - U[j]) / d[i, j]
    G[i], G[j] = gamma * e, -gamma * e
    return G


def diam_penalty_subgradient_property(m: int, n: int, trials: int, seed: int = 0, tol: float = 1e-6, gamma: float = 1.0) -> PropertyReport:
    """Randomised soundness check of two facts about penalty subgradients.

    For g = gamma*diam, certified subgradients have components summing to 0
    and must not be refuted, while candidates with a nonzero component sum
    must be refuted along a common shift of all copies. For
    h = eps_hat*max_i |u_i - a_i| at its anchor, candidates with summed
    component norms above eps_hat must be refuted.
    """
    rng = np.random.default_rng(seed)
    rep = PropertyReport(trials, 0, 0, 0.0)
    f = diam_function(m, n, gamma)
    for k in range(trials):
        kind = k % 4
        if kind == 0:
            U = rng.uniform(-1, 1, size=(m, n))
            G = _diam_subgradient(U, gamma)
            rep.max_sum_norm = max(rep.max_sum_norm, float(np.linalg.norm(G.sum(axis=0))))
            v = frechet_membership_test(f, U.ravel(), G.ravel(), tol=tol, seed=k, r0=1e-4)
            if v.refuted:
                rep.certified_refuted += 1
                rep.failures.append(("certified refuted", k))
        elif kind == 1:
            U = rng.uniform(-1, 1, size=(m, n))
            G = _diam_subgradient(U, gamma)
            shift = rng.standard_normal(n)
            shift *= gamma / (2 * np.linalg.norm(shift))
            G[0] += shift
            v = _shared_direction_test(f, U, G, tol)
            if not v:
                rep.violators_missed += 1
                rep.failures.append(("diam violator missed", k))
        else:
            eps_hat = float(rng.uniform(0.1, 2.0))
            A = rng.uniform(-1, 1, size=(m, n))
            h = anchored_max_function(A, eps_hat)
            G = rng.standard_normal((m, n))
            norms = np.linalg.norm(G, axis=1)
            if kind == 2:
                G *= eps_hat * float(rng.uniform(1.05, 2.0)) / norms.sum()
                if not _max_norm_dual_test(h, A, G, tol):
                    rep.violators_missed += 1
                    rep.failures.append(("anchored violator missed", k))
            else:
                # summed norm within eps_hat: a genuine subgradient of h at its anchor
                G *= eps_hat * float(rng.uniform(0.0, 1.0)) / norms.sum()
                rep.max_anchor_excess = max(rep.max_anchor_excess, float(np.linalg.norm(G, axis=1).sum()) - eps_hat)
                v = frechet_membership_test(h, A.ravel(), G.ravel(), tol=tol, seed=k, r0=1e-4)
                if v.refuted:
                    rep.certified_refuted += 1
                    rep.failures.append(("anchored member refuted", k))
    return rep


def _shared_direction_test(f: Expr, U: np.ndarray, G: np.ndarray, tol: float) -> bool:
    """Refute via u_i' = u_i + s*u for all i: diam is unchanged, so the linear term must vanish."""
    s = G.sum(axis=0)
    u = s / np.linalg.norm(s)
    D = np.tile(u, U.shape[0])
    return _quotient_refutes(f, U.ravel(), G.ravel(), D, tol)


def _max_norm_dual_test(h: Expr, A: np.ndarray, G: np.ndarray, tol: float) -> bool:
    """Refute along u_i = g_i/|g_i|: h grows by eps_hat*r while <G, D> = sum |g_i| > eps_hat."""
    nrm = np.linalg.norm(G, axis=1, keepdims=True)
    D = np.where(nrm > 0, G / np.maximum(nrm, 1e-300), 0.0).ravel()
    return _quotient_refutes(h, A.ravel(), G.ravel(), D, tol)


def _quotient_refutes(f: Expr, x: np.ndarray, g: np.ndarray, d: np.ndarray, tol: float) -> bool:
    fx = f(x)
    for r in 1e-3 * 0.5 ** np.arange(12):
        q = (f(x + r * d) - fx) / r - float(d @ g)
        if q < -tol:
            return True
    return False


# --------------------------------------------------------------------------
# multiplier rule search


@dataclass
class MultiplierConfig:
    delta: Optional[float] = None
    per_axis: int = 33
    max_product: int = 40000
    eps_prime_fraction: float = 0.5
    rho_fraction: float = 0.5
    eta_fraction: float = 0.5
    refine_rounds: int = 6
    local_min_density: int = 65
    local_min_tol: float = 1e-9
    allowed_defect: float = 0.0
    assume_certified: bool = False
    seed: int = 0


@dataclass
class MultiplierResult:
    S: list
    points: np.ndarray
    sum_defect: float
    dual_residual: float
    epsilon: float
    certified: dict
    decomposition: Optional[np.ndarray] = None
    exact_residual: bool = True
    conditional: bool = False
    params: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "S": [str(t) for t in self.S],
            "points": np.asarray(self.points).tolist(),
            "sum_defect": self.sum_defect,
            "dual_residual": self.dual_residual,
            "epsilon": self.epsilon,
            "certified": dict(self.certified),
            "decomposition": None if self.decomposition is None else np.asarray(self.decomposition).tolist(),
            "exact_residual": self.exact_residual,
            "conditional_on_certificate": self.conditional,
            "params": {k: (float(v) if isinstance(v, (int, float, np.floating)) else v) for k, v in self.params.items()},
            "notes": list(self.notes),
        }


def upper_sum_expr(family: FunctionFamily) -> Expr:
    if family.is_finite:
        return SumOf(tuple(family.members))

    def fn(x):
        return float(family.upper_sum_values(np.asarray(x, float)[None, :])[0])

    return Blackbox(fn, name="upper_sum")


def _check_local_min(family: FunctionFamily, xbar: np.ndarray, delta: float, cfg: MultiplierConfig):
    G = region_grid(Ball(tuple(xbar), delta), cfg.local_min_density, 20000)
    G = G[np.linalg.norm(G - xbar[None], axis=1) < delta]
    vals = family.upper_sum_values(G)
    v0 = float(family.upper_sum_values(xbar[None])[0])
    if not np.isfinite(v0):
        raise ValueError("xbar is outside the domain of the upper sum")
    low = float(np.min(vals)) if vals.size else v0
    if low < v0 - cfg.local_min_tol - cfg.allowed_defect:
        raise ValueError(f"xbar is not a grid-local minimizer of the upper sum (found {low:.6g} < {v0:.6g})")
    return v0


def _choose_index_set(family: FunctionFamily, xbar: np.ndarray, S0: Sequence, eps_prime: float):
    if family.is_finite:
        return list(family.enumeration()), False
    enum = family.enumeration()
    need = max([enum.index(t) for t in S0 if t in enum] + [0])
    missing = [t for t in S0 if t not in enum]
    if missing:
        raise ValueError(f"S0 holds unknown indices {missing}")
    r = float(np.linalg.norm(xbar))
    if family.tail_kind == "tail_bounded":
        mode = family.tail_mode(r)
        for pos in range(need, len(enum)):
            if mode.bound(pos) < eps_prime / 2:
                return enum[: pos + 1], False
        raise TailUncontrolled("no prefix within the depth has tail error below eps'/2")
    if family.tail_kind == "monotone":
        P = family.partial_sums(xbar[None])[:, 0]
        top = float(P.max())
        for pos in range(need, len(enum)):
            if abs(P[pos] - top) < eps_prime / 2:
                return enum[: pos + 1], True
    raise TailUncontrolled(f"tail mode {family.tail_kind} gives no error bound")


def _subdifferentials(fs, X):
    sets, exact = [], True
    for f, x in zip(fs, X):
        try:
            sets.append(exact_subdifferential(f, x))
        except ExactnessUnavailable:
            raise
    return sets, exact


def _lower_on_grid(fs, grid: np.ndarray) -> float:
    lows = [float(np.min(f.values(grid))) for f in fs]
    return min(lows)


def multiplier_search(
    family: FunctionFamily,
    xbar,
    eps: float,
    S0: Sequence = (),
    config: Optional[MultiplierConfig] = None,
    certificate=None,
    _target: Optional[np.ndarray] = None,
) -> MultiplierResult:
    """Points x_1..x_m near xbar with small sum defect and dist(0, sum of subdifferentials) < eps."""
    cfg = config or MultiplierConfig()
    xbar = as_point(xbar, family.dim)
    delta = cfg.delta if cfg.delta is not None else eps
    _check_local_min(family, xbar, delta, cfg)
    conditional = False
    notes = []
    if not cfg.assume_certified:
        if certificate is None:
            from .certify import certify_uniform_lsc, light_config

            certificate = certify_uniform_lsc(family, light_config(Ball(tuple(xbar), delta), cfg.seed))
        if certificate.verdict == "Fails":
            raise CertificateMissing("uniform lower semicontinuity fails on the ball")
        if certificate.verdict != "Holds":
            conditional = True
            notes.append("conditional on certificate")
    else:
        notes.append("certificate assumed by the caller")
    dprime = min(eps, delta)
    eps_p = cfg.eps_prime_fraction * eps * dprime / 2
    lo = 2 * eps_p / eps
    rho = lo + cfg.rho_fraction * (dprime - lo)
    S, tail_heuristic = _choose_index_set(family, xbar, S0, eps_p)
    if tail_heuristic:
        notes.append("tail error read from partial sums (monotone mode)")
    fs = family.restrict(S)
    eta = cfg.eta_fraction * rho
    base_grid = ball_grid(xbar, rho, cfg.per_axis)
    c_lower = _lower_on_grid(fs, base_grid)
    obj = build_penalized(fs, xbar, rho, eps, eps_p, eta, c_lower, dprime)
    rng = np.random.default_rng(cfg.seed)
    res = ekeland_step_on_product(obj, per_axis=cfg.per_axis, max_product=cfg.max_product, rng=rng)
    target = np.zeros(family.dim) if _target is None else _target
    best = None
    mesh = res.mesh
    for rnd in range(cfg.refine_rounds + 1):
        X = res.points
        sets, _ = _subdifferentials(fs, X)
        md = distance_to_minkowski_sum(target, sets)
        if best is None or md.distance < best[1].distance:
            best = (res, md)
        if md.distance < eps or rnd == cfg.refine_rounds:
            break
        mesh /= 2
        half = max(cfg.per_axis // 4, 2)
        grids = []
        for x in X:
            g = ball_grid(x, mesh * half, 2 * half + 1)
            g = g[np.linalg.norm(g - xbar[None], axis=1) <= rho]
            grids.append(g)
        try:
            res = ekeland_step_on_product(obj, per_copy=grids, max_product=cfg.max_product, start=X, rng=rng)
        except ParameterRegimeTooCoarse:
            break
    res, md = best
    X = res.points
    defect = float(sum(f(x) - f(xbar) for f, x in zip(fs, X)))
    within = float(np.linalg.norm(X - xbar[None], axis=1).max())
    certified = {
        "points_within_eps": within < eps,
        "residual_below_eps": md.distance < eps,
        "defect_nonpositive": defect <= 1e-12,
        "defect_below_eps": defect < eps,
    }
    params = {
        "eps_prime": eps_p,
        "rho": rho,
        "alpha": obj.alpha,
        "xi": obj.xi,
        "gamma": obj.gamma,
        "eta_prime": eta,
        "c_lower": c_lower,
        "delta_prime": dprime,
        "grid_size": res.grid_size,
        "heuristic_grid": res.heuristic,
    }
    return MultiplierResult(list(S), X, defect, md.distance, eps, certified, md.decomposition, md.exact, conditional, params, notes)


def tilt_function(xstar: np.ndarray, xbar: np.ndarray, eps_prime: float) -> Expr:
    return SumOf((Affine(tuple(-xstar), 0.0), DistancePenalty(tuple(xbar), eps_prime)))


def _tilt_inclusion_ok(tilt: Expr, x0: np.ndarray, xstar: np.ndarray, eps_prime: float) -> bool:
    """Support-function check of d f_t0(x0) inside -x* + eps' closed ball."""
    sd = exact_subdifferential(tilt, x0)
    n = x0.size
    dirs = np.concatenate([np.eye(n), -np.eye(n), np.random.default_rng(0).standard_normal((64, n))])
    for d in dirs:
        d = d / np.linalg.norm(d)
        if sd.support(d) > float(-xstar @ d) + eps_prime + 1e-12:
            return False
    return True


def fuzzy_sum_rule(
    family: FunctionFamily,
    xbar,
    xstar,
    eps: float,
    S0: Sequence = (),
    config: Optional[MultiplierConfig] = None,
    certificate=None,
) -> MultiplierResult:
    """Points x_i near xbar with x* within eps of the sum of subdifferentials at them."""
    cfg = config or MultiplierConfig()
    xbar = as_point(xbar, family.dim)
    xstar = np.atleast_1d(np.asarray(xstar, dtype=float))
    verdict = frechet_membership_test(upper_sum_expr(family), xbar, xstar)
    if verdict.refuted:
        raise ValueError("x* is refuted as a subgradient of the upper sum at xbar")
    notes = []
    conditional = False
    if not cfg.assume_certified:
        if certificate is None:
            from .certify import certify_firm_uniform_lsc, light_config

            delta = cfg.delta if cfg.delta is not None else eps
            certificate = certify_firm_uniform_lsc(family, light_config(Ball(tuple(xbar), delta), cfg.seed))
        if certificate.verdict == "Fails":
            raise CertificateMissing("firm uniform lower semicontinuity fails on the ball")
        conditional = True
        notes.append("conditional on an empirical firm certificate")
    eps_p = eps / (float(np.linalg.norm(xstar)) + 2.0)
    tilt = tilt_function(xstar, xbar, eps_p)
    if not _tilt_inclusion_ok(tilt, xbar, xstar, eps_p):
        raise AssertionError("tilt subdifferential escapes -x* + eps' ball")
    tid = "t0"
    while (family.is_finite and tid in family.ids):
        tid += "_"
    aug = family.with_member(tilt, tid, front=True)
    inner_cfg = MultiplierConfig(**{**cfg.__dict__, "assume_certified": True})
    inner = multiplier_search(aug, xbar, eps_p, list(S0) + [tid], inner_cfg)
    pos = inner.S.index(tid)
    keep = [i for i in range(len(inner.S)) if i != pos]
    S = [inner.S[i] for i in keep]
    X = inner.points[keep]
    fs = aug.restrict(S)
    sets, _ = _subdifferentials(fs, X)
    md = distance_to_minkowski_sum(xstar, sets)
    defect = float(sum(f(x) - f(xbar) for f, x in zip(fs, X)))
    within = float(np.linalg.norm(X - xbar[None], axis=1).max()) if len(X) else 0.0
    certified = {
        "points_within_eps": within < eps,
        "residual_below_eps": md.distance < eps,
        "defect_below_eps": defect < eps,
        "tilt_local_min": True,
        "tilt_subdifferential": True,
        "multiplier_residual_below_eps_prime": inner.dual_residual < eps_p,
    }
    params = dict(inner.params)
    params["tilt_eps_prime"] = eps_p
    return MultiplierResult(S, X, defect, md.distance, eps, certified, md.decomposition, md.exact, conditional or inner.conditional, params, notes + inner.notes)
