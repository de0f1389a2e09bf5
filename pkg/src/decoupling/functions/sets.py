"""Closed convex sets in the dual space, with support and projection oracles."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import INF


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based)."""
    n = v.shape[0]
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, n + 1)
    cond = u - css / ind > 0
    r = ind[cond][-1]
    theta = css[cond][-1] / r
    return np.maximum(v - theta, 0.0)


class DualSet:
    dim: int

    def support(self, d) -> float:
        raise NotImplementedError

    def project(self, y) -> np.ndarray:
        raise NotImplementedError

    def contains(self, g, tol: float = 1e-9) -> bool:
        g = np.atleast_1d(np.asarray(g, dtype=float))
        return float(np.linalg.norm(self.project(g) - g)) <= tol

    def scaled(self, lam: float) -> "DualSet":
        raise NotImplementedError

    def atoms(self) -> list:
        return [self]

    @property
    def axis_separable(self) -> bool:
        return False


@dataclass(frozen=True)
class SinglePoint(DualSet):
    g: tuple

    def __post_init__(self):
        object.__setattr__(self, "g", tuple(float(v) for v in np.atleast_1d(self.g)))

    @property
    def dim(self):
        return len(self.g)

    @property
    def arr(self):
        return np.array(self.g)

    def support(self, d):
        return float(self.arr @ np.asarray(d, float))

    def project(self, y):
        return self.arr.copy()

    def scaled(self, lam):
        return SinglePoint(tuple(lam * self.arr))

    @property
    def axis_separable(self):
        return True

    def bounds(self):
        return self.arr, self.arr


@dataclass(frozen=True)
class BoxSet(DualSet):
    lo: tuple
    hi: tuple

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(float(v) for v in np.atleast_1d(self.lo)))
        object.__setattr__(self, "hi", tuple(float(v) for v in np.atleast_1d(self.hi)))

    @property
    def dim(self):
        return len(self.lo)

    def support(self, d):
        d = np.asarray(d, float)
        lo, hi = np.array(self.lo), np.array(self.hi)
        terms = np.where(d > 0, d * hi, np.where(d < 0, d * lo, 0.0))
        return float(terms.sum())

    def project(self, y):
        return np.clip(np.asarray(y, float), self.lo, self.hi)

    def scaled(self, lam):
        return BoxSet(tuple(lam * np.array(self.lo)), tuple(lam * np.array(self.hi)))

    @property
    def axis_separable(self):
        return True

    def bounds(self):
        return np.array(self.lo), np.array(self.hi)

    def vertices(self) -> np.ndarray:
        lo, hi = np.array(self.lo), np.array(self.hi)
        n = lo.shape[0]
        grid = np.array(np.meshgrid(*[[0, 1]] * n, indexing="ij")).reshape(n, -1).T
        return np.unique(np.where(grid == 1, hi, lo), axis=0)


@dataclass(frozen=True)
class ScaledBall(DualSet):
    center: tuple
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(v) for v in np.atleast_1d(self.center)))

    @property
    def dim(self):
        return len(self.center)

    def support(self, d):
        d = np.asarray(d, float)
        return float(np.array(self.center) @ d + self.radius * np.linalg.norm(d))

    def project(self, y):
        c = np.array(self.center)
        v = np.asarray(y, float) - c
        n = np.linalg.norm(v)
        return c + (v if n <= self.radius else v * (self.radius / n))

    def scaled(self, lam):
        return ScaledBall(tuple(lam * np.array(self.center)), lam * self.radius)

    @property
    def axis_separable(self):
        return self.dim == 1 or self.radius == 0

    def bounds(self):
        c = np.array(self.center)
        return c - self.radius, c + self.radius


@dataclass(frozen=True)
class PolytopeV(DualSet):
    vertices: tuple

    def __post_init__(self):
        V = np.atleast_2d(np.asarray(self.vertices, dtype=float))
        object.__setattr__(self, "vertices", tuple(map(tuple, V)))

    @property
    def V(self):
        return np.array(self.vertices)

    @property
    def dim(self):
        return self.V.shape[1]

    def support(self, d):
        return float((self.V @ np.asarray(d, float)).max())

    def project(self, y, iters: int = 5000):
        V = self.V
        y = np.asarray(y, float)
        if V.shape[0] == 1:
            return V[0].copy()
        # projected gradient on barycentric weights
        w = np.full(V.shape[0], 1.0 / V.shape[0])
        L = max(np.linalg.norm(V, 2) ** 2, 1e-12)
        for _ in range(iters):
            grad = V @ (V.T @ w - y)
            w_new = project_simplex(w - grad / L)
            if np.abs(w_new - w).max() < 1e-15:
                w = w_new
                break
            w = w_new
        return V.T @ w

    def scaled(self, lam):
        return PolytopeV(tuple(map(tuple, lam * self.V)))

    @property
    def axis_separable(self):
        return self.dim == 1

    def bounds(self):
        return self.V.min(axis=0), self.V.max(axis=0)


@dataclass(frozen=True)
class AxisNormalCone(DualSet):
    """Normal cone of a box: per axis +1 (g_i >= 0), -1 (g_i <= 0), 0 (g_i = 0), 2 (free)."""

    signs: tuple

    def __post_init__(self):
        object.__setattr__(self, "signs", tuple(int(s) for s in self.signs))
        if any(s not in (-1, 0, 1, 2) for s in self.signs):
            raise ValueError("axis cone signs are -1, 0, 1 or 2")

    @property
    def dim(self):
        return len(self.signs)

    def bounds(self):
        s = np.array(self.signs)
        lo = np.where((s == -1) | (s == 2), -INF, 0.0)
        hi = np.where((s == 1) | (s == 2), INF, 0.0)
        return lo, hi

    def support(self, d):
        d = np.asarray(d, float)
        lo, hi = self.bounds()
        total = 0.0
        for di, a, b in zip(d, lo, hi):
            if di > 0:
                total += INF if b == INF else 0.0
            elif di < 0:
                total += INF if a == -INF else 0.0
        return total

    def project(self, y):
        lo, hi = self.bounds()
        return np.clip(np.asarray(y, float), lo, hi)

    def scaled(self, lam):
        if lam == 0:
            return SinglePoint(tuple(np.zeros(self.dim)))
        return self

    @property
    def axis_separable(self):
        return True


@dataclass(frozen=True)
class MinkowskiSum(DualSet):
    parts: tuple

    def __post_init__(self):
        flat = []
        for p in self.parts:
            flat.extend(p.atoms())
        if not flat:
            raise ValueError("empty Minkowski sum")
        object.__setattr__(self, "parts", tuple(flat))

    @property
    def dim(self):
        return self.parts[0].dim

    def atoms(self):
        return list(self.parts)

    def support(self, d):
        return float(sum(p.support(d) for p in self.parts))

    def project(self, y):
        from ..multiplier import distance_to_minkowski_sum

        res = distance_to_minkowski_sum(np.asarray(y, float), list(self.parts))
        return np.sum(res.decomposition, axis=0)

    def scaled(self, lam):
        return MinkowskiSum(tuple(p.scaled(lam) for p in self.parts))

    @property
    def axis_separable(self):
        return all(p.axis_separable for p in self.parts)


def minkowski(*sets: DualSet) -> DualSet:
    atoms = []
    for s in sets:
        atoms.extend(s.atoms())
    points = [a for a in atoms if isinstance(a, SinglePoint)]
    rest = [a for a in atoms if not isinstance(a, SinglePoint)]
    if points:
        merged = SinglePoint(tuple(np.sum([p.arr for p in points], axis=0)))
        rest = [merged] + rest
    return rest[0] if len(rest) == 1 else MinkowskiSum(tuple(rest))
