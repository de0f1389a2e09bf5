"""Directional derivatives, exact subdifferentials of the convex fragment, and a
sampling refuter for Frechet subgradients."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..core import INF, Ball, Box, as_point
from .expr import (
    AbsCoord,
    Affine,
    Blackbox,
    Const,
    DistancePenalty,
    Expr,
    IndicatorRegion,
    IndicatorSublevel,
    MaxOf,
    Norm2,
    NormInf,
    QuadForm,
    ReciprocalCoord,
    ScaleNonneg,
    SumOf,
)
from .sets import (
    AxisNormalCone,
    BoxSet,
    DualSet,
    PolytopeV,
    ScaledBall,
    SinglePoint,
    minkowski,
)

ACTIVE_TOL = 1e-12


class NotConvexError(ValueError):
    pass


class ExactnessUnavailable(ValueError):
    """No finite representation of the subdifferential for this composition."""


class OutOfDomain(ValueError):
    pass


def direction_grid(n: int, budget: Optional[int] = None, seed: int = 0) -> np.ndarray:
    """Unit directions: uniform circle for n <= 2, quasi-random sphere points above."""
    if n == 1:
        return np.array([[1.0], [-1.0]])
    if n == 2:
        k = budget or 64
        th = 2 * np.pi * np.arange(k) / k
        return np.stack([np.cos(th), np.sin(th)], axis=1)
    from scipy.stats import qmc

    k = budget or (512 if n == 3 else 512 * 2 ** (n - 3))
    u = qmc.Sobol(d=n, scramble=True, seed=seed).random(k)
    from scipy.special import ndtri

    z = ndtri(np.clip(u, 1e-12, 1 - 1e-12))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    axes = np.concatenate([np.eye(n), -np.eye(n)])
    return np.concatenate([axes, z])


def _near(a, b):
    return abs(a - b) <= ACTIVE_TOL * (1 + abs(a) + abs(b))


def directional_derivative(f: Expr, x, d) -> float:
    """One-sided derivative f'(x; d) of a convex DSL function at a domain point."""
    x = as_point(x)
    d = np.asarray(d, dtype=float)
    if not f.is_convex:
        raise NotConvexError(f"{type(f).__name__} is not declared convex")
    if not np.isfinite(f(x)):
        raise OutOfDomain("x is outside dom f")
    return _dd(f, x, d)


def _dd(f: Expr, x, d) -> float:
    if isinstance(f, Const):
        return 0.0
    if isinstance(f, Affine):
        return float(f.a_arr @ d)
    if isinstance(f, QuadForm):
        return float(f.gradient(x) @ d)
    if isinstance(f, AbsCoord):
        xi, di = x[f.i], d[f.i]
        return abs(di) if xi == 0 else float(np.sign(xi) * di)
    if isinstance(f, Norm2):
        n = np.linalg.norm(x)
        return float(np.linalg.norm(d)) if n == 0 else float(x @ d / n)
    if isinstance(f, DistancePenalty):
        y = x - np.array(f.center)
        n = np.linalg.norm(y)
        return f.weight * (float(np.linalg.norm(d)) if n == 0 else float(y @ d / n))
    if isinstance(f, NormInf):
        m = np.abs(x).max()
        if m == 0:
            return float(np.abs(d).max())
        act = np.abs(np.abs(x) - m) <= ACTIVE_TOL * (1 + m)
        return float(np.max(np.sign(x[act]) * d[act]))
    if isinstance(f, ScaleNonneg):
        return f.lam * _dd(f.child, x, d) if f.lam > 0 else 0.0
    if isinstance(f, SumOf):
        return float(sum(_dd(t, x, d) for t in f.terms))
    if isinstance(f, MaxOf):
        vals = [t(x) for t in f.terms]
        top = max(vals)
        return float(max(_dd(t, x, d) for t, v in zip(f.terms, vals) if _near(v, top)))
    if isinstance(f, IndicatorRegion):
        reg = f.region
        if isinstance(reg, Box):
            for xi, di, lo, hi in zip(x, d, reg.lo, reg.hi):
                if (xi >= hi and di > 0) or (xi <= lo and di < 0):
                    return INF
            return 0.0
        if isinstance(reg, Ball):
            y = x - reg.c
            if np.linalg.norm(y) < reg.radius:
                return 0.0
            return 0.0 if y @ d <= 0 else INF
        return 0.0
    if isinstance(f, IndicatorSublevel):
        if all(np.all(np.asarray(c.lin) == 0) for c in f.constraints):
            return 0.0
        raise ExactnessUnavailable("directional derivative of a general sublevel indicator")
    raise ExactnessUnavailable(f"no directional derivative rule for {type(f).__name__}")


def exact_subdifferential(f: Expr, x) -> DualSet:
    """Exact subdifferential of a DSL function at a point of its domain.

    Covers the convex fragment plus differentiable atoms (where the Frechet
    subdifferential is the gradient).
    """
    x = as_point(x)
    if f.has_blackbox():
        raise ExactnessUnavailable("blackbox functions carry no subdifferential")
    if not np.isfinite(f(x)):
        raise OutOfDomain("x is outside dom f")
    return _sd(f, x)


def _sd(f: Expr, x) -> DualSet:
    n = x.shape[0]
    e = np.eye(n)
    if isinstance(f, Const):
        return SinglePoint(np.zeros(n))
    if isinstance(f, Affine):
        return SinglePoint(f.a_arr)
    if isinstance(f, QuadForm):
        return SinglePoint(f.gradient(x))
    if isinstance(f, ReciprocalCoord):
        return SinglePoint(f.gradient(x))
    if isinstance(f, AbsCoord):
        if x[f.i] != 0:
            return SinglePoint(np.sign(x[f.i]) * e[f.i])
        lo, hi = np.zeros(n), np.zeros(n)
        lo[f.i], hi[f.i] = -1.0, 1.0
        return BoxSet(lo, hi)
    if isinstance(f, Norm2):
        nx = np.linalg.norm(x)
        return SinglePoint(x / nx) if nx > 0 else ScaledBall(np.zeros(n), 1.0)
    if isinstance(f, DistancePenalty):
        y = x - np.array(f.center)
        ny = np.linalg.norm(y)
        if ny > 0:
            return SinglePoint(f.weight * y / ny)
        return ScaledBall(np.zeros(n), f.weight)
    if isinstance(f, NormInf):
        m = np.abs(x).max()
        if m == 0:
            return PolytopeV(np.concatenate([e, -e]))
        act = np.where(np.abs(np.abs(x) - m) <= ACTIVE_TOL * (1 + m))[0]
        V = np.array([np.sign(x[i]) * e[i] for i in act])
        return SinglePoint(V[0]) if len(act) == 1 else PolytopeV(V)
    if isinstance(f, ScaleNonneg):
        return _sd(f.child, x).scaled(f.lam)
    if isinstance(f, SumOf):
        return minkowski(*[_sd(t, x) for t in f.terms])
    if isinstance(f, MaxOf):
        vals = [t(x) for t in f.terms]
        top = max(vals)
        active = [t for t, v in zip(f.terms, vals) if _near(v, top)]
        sets = [_sd(t, x) for t in active]
        if len(sets) == 1:
            return sets[0]
        verts = []
        for s in sets:
            if isinstance(s, SinglePoint):
                verts.append(s.arr[None, :])
            elif isinstance(s, PolytopeV):
                verts.append(s.V)
            elif isinstance(s, BoxSet):
                verts.append(s.vertices())
            else:
                raise ExactnessUnavailable("max of children with non-polyhedral subdifferentials")
        return PolytopeV(np.unique(np.concatenate(verts), axis=0))
    if isinstance(f, IndicatorRegion):
        reg = f.region
        if isinstance(reg, Box):
            signs = []
            for xi, lo, hi in zip(x, reg.lo, reg.hi):
                if lo == hi:
                    signs.append(2)
                elif xi >= hi:
                    signs.append(1)
                elif xi <= lo:
                    signs.append(-1)
                else:
                    signs.append(0)
            return AxisNormalCone(tuple(signs))
        if isinstance(reg, Ball):
            if np.linalg.norm(x - reg.c) < reg.radius:
                return SinglePoint(np.zeros(n))
            raise ExactnessUnavailable("normal cone of a ball boundary is a ray")
        return SinglePoint(np.zeros(n))
    raise ExactnessUnavailable(f"no exact subdifferential for {type(f).__name__}")


@dataclass
class MembershipVerdict:
    refuted: bool
    direction: Optional[np.ndarray] = None
    radius: Optional[float] = None
    quotient: float = 0.0

    def __bool__(self):
        return self.refuted


def frechet_membership_test(
    f: Expr,
    x,
    g,
    tol: float = 1e-6,
    budget: Optional[int] = None,
    r0: float = 1e-3,
    levels: int = 12,
    seed: int = 0,
) -> MembershipVerdict:
    """Try to refute g in the Frechet subdifferential of f at x by sampling.

    A sample (d, r) refutes when (f(x + r d) - f(x) - r <g, d>) / r < -tol.
    Not refuting is evidence, not proof.
    """
    x = as_point(x)
    g = np.atleast_1d(np.asarray(g, dtype=float))
    fx = f(x)
    if not np.isfinite(fx):
        raise OutOfDomain("x is outside dom f")
    n = x.shape[0]
    D = direction_grid(n, budget, seed)
    radii = r0 * 0.5 ** np.arange(levels)
    best = MembershipVerdict(False, quotient=INF)
    for r in radii:
        vals = f.values(x + r * D)
        q = (vals - fx) / r - D @ g
        k = int(np.argmin(q))
        if q[k] < best.quotient:
            best = MembershipVerdict(bool(q[k] < -tol), D[k].copy(), float(r), float(q[k]))
        if best.refuted:
            return best
    return MembershipVerdict(False, best.direction, best.radius, best.quotient)
