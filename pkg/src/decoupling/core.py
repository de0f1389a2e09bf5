"""Extended reals, regions and directed limits along chains of finite index sets."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

INF = math.inf

DIVERGENCE_FLOOR = -1.0e6


class IndefiniteFormError(ArithmeticError):
    """Raised when an operation would have to produce inf - inf."""


def ext_add(a: float, b: float) -> float:
    """Sum in R u {+inf}; -inf inputs are rejected."""
    if a == -INF or b == -INF:
        raise IndefiniteFormError("-inf is not a function value")
    return a + b


def ext_sub(a: float, b: float) -> float:
    """a - b for limit values; inf - inf is an error rather than nan."""
    if (a == INF and b == INF) or (a == -INF and b == -INF):
        raise IndefiniteFormError(f"{a} - {b}")
    return a - b


def ext_sum(values) -> float:
    total = 0.0
    for v in values:
        total = ext_add(total, float(v))
    return total


def as_point(x, dim: Optional[int] = None) -> np.ndarray:
    p = np.atleast_1d(np.asarray(x, dtype=float))
    if p.ndim != 1:
        raise ValueError("a point is a 1-d coordinate vector")
    if not np.all(np.isfinite(p)):
        raise ValueError("points must have finite coordinates")
    if dim is not None and p.shape[0] != dim:
        raise ValueError(f"dimension mismatch: expected {dim}, got {p.shape[0]}")
    return p


def diam(points) -> float:
    """Largest pairwise Euclidean distance of a nonempty list of points."""
    pts = [np.atleast_1d(np.asarray(p, dtype=float)) for p in points]
    if not pts:
        raise ValueError("diam of an empty set")
    dims = {p.shape for p in pts}
    if len(dims) != 1:
        raise ValueError("dimension mismatch in diam")
    P = np.stack(pts)
    return float(pairwise_max_dist(P))


def pairwise_max_dist(P: np.ndarray) -> np.ndarray:
    """diam over axis -2 of an array of shape (..., m, n)."""
    diff = P[..., :, None, :] - P[..., None, :, :]
    return np.sqrt((diff ** 2).sum(-1)).max(axis=(-1, -2))


# --------------------------------------------------------------------------
# regions


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        if len(lo) != len(hi):
            raise ValueError("box bounds differ in dimension")
        if any(a > b for a, b in zip(lo, hi)):
            raise ValueError("box with lo > hi")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def lo_arr(self) -> np.ndarray:
        return np.array(self.lo)

    @property
    def hi_arr(self) -> np.ndarray:
        return np.array(self.hi)

    def contains(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return np.all((X >= self.lo_arr) & (X <= self.hi_arr), axis=-1)

    def interior_distance(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        d = np.minimum(X - self.lo_arr, self.hi_arr - X).min(axis=-1)
        return np.where(self.contains(X), d, 0.0)

    def project(self, X) -> np.ndarray:
        return np.clip(X, self.lo_arr, self.hi_arr)

    def bounding_box(self) -> "Box":
        return self

    def shrink(self, rho: float) -> Optional["Box"]:
        lo, hi = self.lo_arr + rho, self.hi_arr - rho
        if np.any(lo > hi):
            return None
        return Box(tuple(lo), tuple(hi))

    def scale_diam(self) -> float:
        return float(np.linalg.norm(self.hi_arr - self.lo_arr))

    def dist(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return np.linalg.norm(X - self.project(X), axis=-1)

    def describe(self) -> str:
        return "x".join(f"[{a:g},{b:g}]" for a, b in zip(self.lo, self.hi))


@dataclass(frozen=True)
class Ball:
    center: tuple
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(v) for v in np.atleast_1d(self.center)))
        if self.radius <= 0:
            raise ValueError("ball radius must be positive")

    @property
    def dim(self) -> int:
        return len(self.center)

    @property
    def c(self) -> np.ndarray:
        return np.array(self.center)

    def contains(self, X) -> np.ndarray:
        return np.linalg.norm(np.asarray(X, float) - self.c, axis=-1) <= self.radius

    def interior_distance(self, X) -> np.ndarray:
        return np.maximum(self.radius - np.linalg.norm(np.asarray(X, float) - self.c, axis=-1), 0.0)

    def project(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        d = X - self.c
        n = np.linalg.norm(d, axis=-1, keepdims=True)
        scale = np.where(n > self.radius, self.radius / np.maximum(n, 1e-300), 1.0)
        return self.c + d * scale

    def bounding_box(self) -> Box:
        return Box(tuple(self.c - self.radius), tuple(self.c + self.radius))

    def shrink(self, rho: float) -> Optional["Ball"]:
        if rho >= self.radius:
            return None
        return Ball(self.center, self.radius - rho)

    def scale_diam(self) -> float:
        return 2.0 * self.radius

    def dist(self, X) -> np.ndarray:
        return np.maximum(np.linalg.norm(np.asarray(X, float) - self.c, axis=-1) - self.radius, 0.0)

    def describe(self) -> str:
        return f"B({list(self.center)},{self.radius:g})"


@dataclass(frozen=True)
class WholeSpace:
    """All of R^n; ``window`` only bounds where searches place their grids."""

    window: Box

    @property
    def dim(self) -> int:
        return self.window.dim

    def contains(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return np.ones(X.shape[:-1], dtype=bool)

    def interior_distance(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return np.full(X.shape[:-1], INF)

    def project(self, X) -> np.ndarray:
        return np.asarray(X, dtype=float)

    def bounding_box(self) -> Box:
        return self.window

    def shrink(self, rho: float) -> "WholeSpace":
        return self

    def scale_diam(self) -> float:
        return self.window.scale_diam()

    def dist(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return np.zeros(X.shape[:-1])

    def describe(self) -> str:
        return f"R^{self.dim} (window {self.window.describe()})"


Region = Box | Ball | WholeSpace


def region_grid(region: Region, density: int, max_points: int = 40000) -> np.ndarray:
    """Product grid over the region's bounding box, filtered to the region."""
    box = region.bounding_box()
    n = box.dim
    per_axis = max(2, min(density, int(round(max_points ** (1.0 / n)))))
    axes = [np.linspace(a, b, per_axis) if b > a else np.array([a]) for a, b in zip(box.lo, box.hi)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    return mesh[region.contains(mesh)]


def region_sample(region: Region, count: int, rng: np.random.Generator) -> np.ndarray:
    box = region.bounding_box()
    X = rng.uniform(box.lo_arr, box.hi_arr, size=(count * 2, box.dim))
    X = X[region.contains(X)]
    if X.shape[0] < count:
        X = np.concatenate([X, region.project(rng.uniform(box.lo_arr, box.hi_arr, size=(count, box.dim)))])
    return X[:count]


def essentially_interior(region: Region, rho: float) -> Optional[Region]:
    """V_rho = points of the region at distance >= rho from its complement."""
    if rho <= 0:
        raise ValueError("rho must be positive")
    return region.shrink(rho)


def rho_schedule(region: Region, levels: int = 4) -> list[float]:
    top = region.scale_diam() / 8.0
    return [top * 0.5 ** k for k in range(levels)]


# --------------------------------------------------------------------------
# index sets and directed limits


@dataclass(frozen=True)
class ChainSchedule:
    """Nested prefixes S_0 c S_1 c ... of an enumeration of the index set."""

    prefixes: tuple

    def __post_init__(self):
        pref = tuple(tuple(p) for p in self.prefixes)
        for a, b in zip(pref, pref[1:]):
            if not set(a) <= set(b):
                raise ValueError("chain prefixes must be nested")
        for p in pref:
            if len(set(p)) != len(p):
                raise ValueError("index subsets hold distinct ids")
        object.__setattr__(self, "prefixes", pref)

    @classmethod
    def from_enumeration(cls, indices: Sequence, sizes: Optional[Sequence[int]] = None) -> "ChainSchedule":
        indices = list(indices)
        if sizes is None:
            sizes = range(1, len(indices) + 1)
        return cls(tuple(tuple(indices[:k]) for k in sizes))

    @property
    def max_depth(self) -> int:
        return len(self.prefixes)

    def __len__(self) -> int:
        return len(self.prefixes)

    def __iter__(self):
        return iter(self.prefixes)


@dataclass(frozen=True)
class TailMode:
    """How prefix values relate to the directed limit.

    kind is one of "finite", "monotone", "tail_bounded", "unknown".  For
    "tail_bounded", ``bound(k)`` bounds |v_k - limit| for the prefix at depth k.
    """

    kind: str
    bound: Optional[Callable[[int], float]] = None

    def __post_init__(self):
        if self.kind not in ("finite", "monotone", "tail_bounded", "unknown"):
            raise ValueError(f"unknown tail mode {self.kind!r}")
        if self.kind == "tail_bounded" and self.bound is None:
            raise ValueError("tail_bounded needs a bound callable")


FINITE = TailMode("finite")
MONOTONE = TailMode("monotone")
UNKNOWN = TailMode("unknown")


@dataclass
class LimitResult:
    value: float
    radius: float = 0.0
    inconclusive: bool = False
    note: str = ""


def _tail_window(values: list[float]) -> list[float]:
    return values[len(values) // 2:]


def _directed(values: Sequence[float], mode: TailMode, upper: bool) -> LimitResult:
    vals = [float(v) for v in values]
    if not vals:
        raise ValueError("directed limit of an empty sequence")
    if mode.kind == "finite":
        return LimitResult(vals[-1])
    if mode.kind == "monotone":
        return LimitResult(max(vals))
    if mode.kind == "tail_bounded":
        k = len(vals) - 1
        return LimitResult(vals[-1], radius=float(mode.bound(k)))
    window = _tail_window(vals)
    v = max(window) if upper else min(window)
    return LimitResult(v, inconclusive=True, note="empirical tail window")


def geometric_tail_limit(values: Sequence[float], rtol: float = 1e-6) -> Optional[float]:
    """Aitken delta-squared limit when the last four steps shrink by one common ratio.

    Returns None unless the successive differences form a geometric sequence
    with ratio in (-1, 1), so non-geometric chains are left alone.
    """
    v = [float(x) for x in values[-4:]]
    if len(v) < 4 or not all(math.isfinite(x) for x in v):
        return None
    d = [v[i + 1] - v[i] for i in range(3)]
    if d[0] == 0.0 or d[1] == 0.0:
        return None
    q1, q2 = d[1] / d[0], d[2] / d[1]
    if not (abs(q2) < 1.0 and abs(q1 - q2) <= rtol * abs(q2)):
        return None
    return v[-1] + d[2] * q2 / (1.0 - q2)


def directed_limsup(values: Sequence[float], mode: TailMode = FINITE) -> LimitResult:
    """Upper limit of prefix values along a chain, read according to ``mode``."""
    return _directed(values, mode, upper=True)


def directed_liminf(values: Sequence[float], mode: TailMode = FINITE) -> LimitResult:
    """Lower limit of prefix values along a chain, read according to ``mode``."""
    return _directed(values, mode, upper=False)


def is_diverging(trend: Sequence[float], floor: float = DIVERGENCE_FLOOR) -> bool:
    """-inf verdict: value below the floor and strictly decreasing over the last 3 steps."""
    if any(v == -INF for v in trend):
        return True
    if len(trend) < 3:
        return False
    a, b, c = trend[-3:]
    return c < floor and a > b > c


def _line_fit(d: np.ndarray, v: np.ndarray):
    A = np.stack([np.ones_like(d), d], axis=1)
    coef, *_ = np.linalg.lstsq(A, v, rcond=None)
    return coef, float(np.max(np.abs(A @ coef - v)))


def extrapolate_to_zero(deltas: Sequence[float], values: Sequence[float], last: int = 4, rtol: float = 1e-7) -> float:
    """Intercept of a linear fit v ~ a + b*delta on the finest levels.

    The window shrinks (down to three levels) while the points are not
    collinear, so a kink inside the window does not bias the intercept. Curved
    monotone data get a quadratic through the finest three levels; anything
    else is treated as noise and fitted over the full window.
    """
    d = np.asarray(deltas[-last:], dtype=float)
    v = np.asarray(values[-last:], dtype=float)
    if len(d) < 2 or not np.all(np.isfinite(v)):
        return float(v[-1])
    tol = rtol * (1.0 + float(np.max(np.abs(v))))
    for w in range(len(d), 2, -1):
        coef, resid = _line_fit(d[-w:], v[-w:])
        if resid <= tol:
            return float(coef[0])
    coef_all, _ = _line_fit(d, v)
    if len(d) >= 3 and np.all(np.diff(v) * np.sign(v[-1] - v[0]) >= 0):
        # monotone but curved: a quadratic through the finest three levels is
        # exact to second order for smooth data
        q = np.polyfit(d[-3:], v[-3:], 2)
        return float(q[-1])
    return float(coef_all[0])
