"""Expression nodes for extended-real-valued functions on R^n.

Every node evaluates batches: ``f.values(X)`` with ``X`` of shape (N, n)
returns N values in R u {+inf}.  Convexity and Lipschitz data are metadata
used by the estimators; they are declared, not detected.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..core import INF, Ball, Box, Region, as_point


class Expr:
    """Base class; subclasses are frozen dataclasses."""

    is_convex: bool = True
    is_lsc: bool = True
    smooth: bool = False

    def values(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, x) -> float:
        return float(self.values(as_point(x)[None, :])[0])

    @property
    def lipschitz(self) -> Optional[float]:
        return None

    def children(self) -> tuple:
        return ()

    def has_blackbox(self) -> bool:
        return isinstance(self, Blackbox) or any(c.has_blackbox() for c in self.children())

    def interval_inf(self, lo: float, hi: float) -> Optional[float]:
        """Exact inf over [lo, hi] for one-dimensional inputs, when known."""
        return None

    def ball_inf(self, c: np.ndarray, r: float) -> Optional[float]:
        """Exact inf over the open ball B_r(c), when known in closed form."""
        return None

    def in_domain(self, X) -> np.ndarray:
        return np.isfinite(self.values(np.atleast_2d(X)))

    def __add__(self, other: "Expr") -> "SumOf":
        return SumOf((self, other))


def _X(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    return X


def _convex_interval_min(f: Expr, lo: float, hi: float, iters: int = 200) -> float:
    """Golden-section minimum of a convex 1-d function on [lo, hi]."""
    g = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = f(np.array([c])), f(np.array([d]))
    for _ in range(iters):
        if b - a < 1e-15 * (1 + abs(a) + abs(b)):
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = f(np.array([c]))
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = f(np.array([d]))
    return min(fc, fd, f(np.array([lo])), f(np.array([hi])), f(np.array([(a + b) / 2])))


@dataclass(frozen=True)
class Const(Expr):
    c: float
    smooth = True

    def values(self, X):
        return np.full(_X(X).shape[0], float(self.c))

    @property
    def lipschitz(self):
        return 0.0

    def interval_inf(self, lo, hi):
        return float(self.c)

    def ball_inf(self, c, r):
        return float(self.c)


@dataclass(frozen=True)
class Affine(Expr):
    a: tuple
    b: float = 0.0
    smooth = True

    def __post_init__(self):
        object.__setattr__(self, "a", tuple(float(v) for v in np.atleast_1d(self.a)))

    @property
    def a_arr(self):
        return np.array(self.a)

    def values(self, X):
        return _X(X) @ self.a_arr + self.b

    @property
    def lipschitz(self):
        return float(np.linalg.norm(self.a_arr))

    def interval_inf(self, lo, hi):
        return float(min(self.a[0] * lo, self.a[0] * hi) + self.b)

    def ball_inf(self, c, r):
        return float(c @ self.a_arr + self.b - r * np.linalg.norm(self.a_arr))


@dataclass(frozen=True)
class QuadForm(Expr):
    """x^T Q x + <a, x> + b with Q symmetric positive semidefinite."""

    Q: tuple
    a: tuple
    b: float = 0.0
    smooth = True

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        Q = 0.5 * (Q + Q.T)
        object.__setattr__(self, "Q", tuple(map(tuple, Q)))
        object.__setattr__(self, "a", tuple(float(v) for v in np.atleast_1d(self.a)))

    @property
    def Q_arr(self):
        return np.array(self.Q)

    def values(self, X):
        X = _X(X)
        return np.einsum("ni,ij,nj->n", X, self.Q_arr, X) + X @ np.array(self.a) + self.b

    def gradient(self, x):
        return 2 * self.Q_arr @ x + np.array(self.a)

    def interval_inf(self, lo, hi):
        q, a = self.Q[0][0], self.a[0]
        cands = [lo, hi]
        if q > 0:
            cands.append(min(max(-a / (2 * q), lo), hi))
        return float(min(q * t * t + a * t + self.b for t in cands))


@dataclass(frozen=True)
class AbsCoord(Expr):
    i: int

    def values(self, X):
        return np.abs(_X(X)[:, self.i])

    @property
    def lipschitz(self):
        return 1.0

    def interval_inf(self, lo, hi):
        return 0.0 if lo <= 0 <= hi else float(min(abs(lo), abs(hi)))

    def ball_inf(self, c, r):
        return float(max(abs(c[self.i]) - r, 0.0))


@dataclass(frozen=True)
class Norm2(Expr):
    def values(self, X):
        return np.linalg.norm(_X(X), axis=1)

    @property
    def lipschitz(self):
        return 1.0

    def interval_inf(self, lo, hi):
        return AbsCoord(0).interval_inf(lo, hi)

    def ball_inf(self, c, r):
        return float(max(np.linalg.norm(c) - r, 0.0))


@dataclass(frozen=True)
class NormInf(Expr):
    def values(self, X):
        return np.abs(_X(X)).max(axis=1)

    @property
    def lipschitz(self):
        return 1.0

    def interval_inf(self, lo, hi):
        return AbsCoord(0).interval_inf(lo, hi)


@dataclass(frozen=True)
class DistancePenalty(Expr):
    """weight * ||x - center||."""

    center: tuple
    weight: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(v) for v in np.atleast_1d(self.center)))
        if self.weight < 0:
            raise ValueError("distance penalty weight must be nonnegative")

    def values(self, X):
        return self.weight * np.linalg.norm(_X(X) - np.array(self.center), axis=1)

    @property
    def lipschitz(self):
        return float(self.weight)

    def interval_inf(self, lo, hi):
        c = self.center[0]
        return float(self.weight * (0.0 if lo <= c <= hi else min(abs(lo - c), abs(hi - c))))

    def ball_inf(self, c, r):
        return float(self.weight * max(np.linalg.norm(c - np.array(self.center)) - r, 0.0))


@dataclass(frozen=True)
class ReciprocalCoord(Expr):
    """sign / x_i off the hyperplane x_i = 0, +inf on it."""

    i: int
    sign: int = 1
    is_convex = False
    smooth = True

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")

    def values(self, X):
        t = _X(X)[:, self.i]
        out = np.full(t.shape, INF)
        nz = t != 0
        out[nz] = self.sign / t[nz]
        return out

    def gradient(self, x):
        g = np.zeros_like(x, dtype=float)
        g[self.i] = -self.sign / x[self.i] ** 2
        return g

    def interval_inf(self, lo, hi):
        s = self.sign
        # s/t decreases without bound as t -> 0 from the side where s*t < 0
        if s > 0 and lo < 0:
            return -INF
        if s < 0 and hi > 0:
            return -INF
        vals = [s / t for t in (lo, hi) if t != 0]
        return float(min(vals)) if vals else INF


@dataclass(frozen=True)
class IndicatorRegion(Expr):
    region: Region

    def values(self, X):
        return np.where(self.region.contains(_X(X)), 0.0, INF)

    def interval_inf(self, lo, hi):
        box = self.region.bounding_box()
        return 0.0 if (hi >= box.lo[0] and lo <= box.hi[0]) else INF

    def ball_inf(self, c, r):
        return 0.0 if float(self.region.dist(c[None, :])[0]) < r else INF


@dataclass(frozen=True)
class Constraint:
    """<lin, x> + sum_i recip_i / x_i + const <= 0; recip_i != 0 requires x_i != 0."""

    lin: tuple
    recip: tuple
    const: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "lin", tuple(float(v) for v in self.lin))
        object.__setattr__(self, "recip", tuple(float(v) for v in self.recip))

    def feasible(self, X) -> np.ndarray:
        X = _X(X)
        r = np.array(self.recip)
        used = r != 0
        ok = np.all(X[:, used] != 0, axis=1)
        safe = np.where(X == 0, 1.0, X)
        g = X @ np.array(self.lin) + (r / safe).sum(axis=1) + self.const
        return ok & (g <= 0)

    @property
    def convex(self) -> bool:
        return not any(self.recip)


@dataclass(frozen=True)
class IndicatorSublevel(Expr):
    constraints: tuple

    def __post_init__(self):
        object.__setattr__(self, "constraints", tuple(self.constraints))

    @property
    def is_convex(self):
        return all(c.convex for c in self.constraints)

    def values(self, X):
        X = _X(X)
        ok = np.ones(X.shape[0], dtype=bool)
        for c in self.constraints:
            ok &= c.feasible(X)
        return np.where(ok, 0.0, INF)


@dataclass(frozen=True)
class ScaleNonneg(Expr):
    lam: float
    child: Expr

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("scale must be nonnegative")

    def children(self):
        return (self.child,)

    @property
    def is_convex(self):
        return self.child.is_convex

    @property
    def smooth(self):
        return self.child.smooth

    def values(self, X):
        v = self.child.values(X)
        if self.lam == 0:
            return np.where(np.isfinite(v), 0.0, INF)
        return self.lam * v

    @property
    def lipschitz(self):
        L = self.child.lipschitz
        return None if L is None else self.lam * L

    def interval_inf(self, lo, hi):
        v = self.child.interval_inf(lo, hi)
        if v is None:
            return None
        return 0.0 if (self.lam == 0 and v < INF) else self.lam * v

    def ball_inf(self, c, r):
        v = self.child.ball_inf(c, r)
        if v is None:
            return None
        return 0.0 if (self.lam == 0 and v < INF) else self.lam * v


@dataclass(frozen=True)
class SumOf(Expr):
    terms: tuple

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        if not self.terms:
            raise ValueError("empty sum")

    def children(self):
        return self.terms

    @property
    def is_convex(self):
        return all(t.is_convex for t in self.terms)

    @property
    def smooth(self):
        return all(t.smooth for t in self.terms)

    def values(self, X):
        out = np.zeros(_X(X).shape[0])
        for t in self.terms:
            out = out + t.values(X)
        return out

    @property
    def lipschitz(self):
        Ls = [t.lipschitz for t in self.terms]
        return None if any(L is None for L in Ls) else float(sum(Ls))

    def interval_inf(self, lo, hi):
        if self.is_convex and not self.has_blackbox():
            return float(_convex_interval_min(self, lo, hi))
        return None


@dataclass(frozen=True)
class MaxOf(Expr):
    terms: tuple

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        if not self.terms:
            raise ValueError("empty max")

    def children(self):
        return self.terms

    @property
    def is_convex(self):
        return all(t.is_convex for t in self.terms)

    def values(self, X):
        return np.max(np.stack([t.values(X) for t in self.terms]), axis=0)

    @property
    def lipschitz(self):
        Ls = [t.lipschitz for t in self.terms]
        return None if any(L is None for L in Ls) else float(max(Ls))

    def interval_inf(self, lo, hi):
        if self.is_convex and not self.has_blackbox():
            return float(_convex_interval_min(self, lo, hi))
        return None


@dataclass(frozen=True, eq=False)
class Blackbox(Expr):
    """User callback; ``fn`` maps one point to a float, ``dom`` to a bool."""

    fn: Callable
    dom: Optional[Callable] = None
    convex: bool = False
    lip: Optional[float] = None
    name: str = "blackbox"

    @property
    def is_convex(self):
        return self.convex

    @property
    def lipschitz(self):
        return self.lip

    def values(self, X):
        X = _X(X)
        out = np.empty(X.shape[0])
        for k, x in enumerate(X):
            if self.dom is not None and not self.dom(x):
                out[k] = INF
            else:
                out[k] = float(self.fn(x))
        if np.any(out == -INF):
            raise ValueError("blackbox returned -inf")
        return out


def evaluate(f: Expr, x) -> float:
    """Value of f at one point."""
    return f(x)


def convexity_spot_check(f: Expr, points: np.ndarray, rng: np.random.Generator, trials: int = 200) -> bool:
    """Midpoint test of the declared convexity flag on random pairs of domain points."""
    P = np.atleast_2d(points)
    vals = f.values(P)
    dom = P[np.isfinite(vals)]
    if dom.shape[0] < 2:
        return True
    i = rng.integers(0, dom.shape[0], size=trials)
    j = rng.integers(0, dom.shape[0], size=trials)
    mid = 0.5 * (dom[i] + dom[j])
    fm = f.values(mid)
    fa, fb = f.values(dom[i]), f.values(dom[j])
    return bool(np.all(fm <= 0.5 * (fa + fb) + 1e-9 * (1 + np.abs(fa) + np.abs(fb))))
