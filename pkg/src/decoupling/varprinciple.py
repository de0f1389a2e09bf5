"""Ekeland's variational principle on finite grids, and the penalized
decoupled objectives used to locate fuzzy multiplier points."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import DIVERGENCE_FLOOR, INF, pairwise_max_dist
from .functions.expr import Expr


class UnboundedBelow(ArithmeticError):
    pass


class ParameterRegimeTooCoarse(RuntimeError):
    """The grid cannot realise the guarantees for the chosen parameters."""


class ParameterError(ValueError):
    pass


@dataclass
class GridSpace:
    """Finite metric space: rows of ``points`` have shape (copies, dim); the
    metric is the max over copies of the Euclidean distance."""

    points: np.ndarray
    heuristic: bool = False
    mesh: float = 0.0

    def __post_init__(self):
        P = np.asarray(self.points, dtype=float)
        if P.ndim == 2:
            P = P[:, None, :]
        if P.ndim != 3 or P.shape[0] == 0:
            raise ValueError("grid needs shape (N, copies, dim) with N > 0")
        self.points = P

    def __len__(self):
        return self.points.shape[0]

    @property
    def copies(self) -> int:
        return self.points.shape[1]

    def dist_from(self, i: int) -> np.ndarray:
        return np.linalg.norm(self.points - self.points[i][None], axis=-1).max(axis=1)

    def index_of(self, p, tol: float = 1e-12) -> int:
        p = np.asarray(p, dtype=float).reshape(self.points.shape[1:])
        d = np.linalg.norm(self.points - p[None], axis=-1).max(axis=1)
        k = int(np.argmin(d))
        if d[k] > tol:
            raise KeyError("point not on the grid")
        return k

    @classmethod
    def product(cls, per_copy: Sequence[np.ndarray]) -> "GridSpace":
        grids = [np.atleast_2d(np.asarray(g, dtype=float)) for g in per_copy]
        idx = np.array(list(itertools.product(*[range(g.shape[0]) for g in grids])), dtype=int)
        P = np.stack([grids[c][idx[:, c]] for c in range(len(grids))], axis=1)
        return cls(P)


def _lex_order(points: np.ndarray) -> np.ndarray:
    flat = points.reshape(points.shape[0], -1)
    return np.lexsort(flat.T[::-1])


def evp_violations(values: np.ndarray, space: GridSpace, i: int, eps: float) -> np.ndarray:
    """Indices y with d(y, x_i) > 0 and f(y) + eps d(y, x_i) <= f(x_i).

    Rows at distance zero are the same point of the metric space."""
    d = space.dist_from(i)
    with np.errstate(invalid="ignore"):
        # difference first: f(y) + eps d would absorb tiny eps d into f(y)
        bad = ((values - values[i]) + eps * d <= 0) & (d > 0)
    return np.where(bad)[0]


def evp_check(values: np.ndarray, space: GridSpace, start: int, out: int, eps: float) -> bool:
    """Exhaustive two-inequality check of an Ekeland point."""
    values = np.asarray(values, dtype=float)
    if not values[out] <= values[start]:
        return False
    return evp_violations(values, space, out, eps).size == 0


def _check_single_valued(f: np.ndarray, space: GridSpace):
    flat = space.points.reshape(len(space), -1)
    _, inv = np.unique(flat, axis=0, return_inverse=True)
    inv = inv.ravel()
    lo = np.full(inv.max() + 1, np.inf)
    hi = np.full(inv.max() + 1, -np.inf)
    np.minimum.at(lo, inv, f)
    np.maximum.at(hi, inv, f)
    same = (lo == hi) | (np.isnan(lo) & np.isnan(hi))
    if not np.all(same):
        raise ValueError("repeated grid points carry different values")


def ekeland_on_grid(values, space: GridSpace, start: int, eps: float, floor: float = DIVERGENCE_FLOOR) -> int:
    """Index of an Ekeland point of the grid function ``values`` started at ``start``.

    Moves to the minimiser of f(y) + eps d(y, x_k) while that does not exceed
    f(x_k) (ties: smaller f, then lexicographic point order). Every move
    strictly lowers f, so the loop ends after at most len(grid) moves.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    f = np.asarray(values, dtype=float)
    if f.shape != (len(space),):
        raise ValueError("one value per grid point")
    if not np.isfinite(f[start]):
        raise ValueError("start must be in the domain")
    if np.any(f == -INF) or np.nanmin(f) < floor:
        raise UnboundedBelow(f"grid values fall below the floor {floor:g}")
    _check_single_valued(f, space)
    lex_rank = np.empty(len(space), dtype=int)
    lex_rank[_lex_order(space.points)] = np.arange(len(space))
    k = start
    for _ in range(len(space) + 1):
        bad = evp_violations(f, space, k, eps)
        if bad.size == 0:
            if not evp_check(f, space, start, k, eps):
                raise AssertionError("internal: EVP postcondition failed")
            return int(k)
        g = (f[bad] - f[k]) + eps * space.dist_from(k)[bad]
        order = np.lexsort((lex_rank[bad], f[bad], g))
        k = int(bad[order[0]])
    raise AssertionError("internal: EVP iteration did not terminate")


# --------------------------------------------------------------------------
# penalized objectives


@dataclass
class PenalizedObjective:
    functions: list
    anchor: np.ndarray
    gamma: float
    alpha: float
    xi: float
    rho: float
    eta: float
    eps: float
    eps_prime: float
    c_lower: float

    @property
    def m(self) -> int:
        return len(self.functions)

    def sum_values(self, U: np.ndarray) -> np.ndarray:
        U = np.asarray(U, dtype=float)
        out = np.zeros(U.shape[0])
        for i, f in enumerate(self.functions):
            out = out + f.values(U[:, i, :])
        return out

    def phi(self, U: np.ndarray) -> np.ndarray:
        return self.sum_values(U) + self.gamma * pairwise_max_dist(np.asarray(U, float))

    def phi_hat(self, U: np.ndarray) -> np.ndarray:
        U = np.asarray(U, dtype=float)
        anchor_sq = (np.linalg.norm(U - self.anchor[None, None, :], axis=-1) ** 2).max(axis=1)
        return self.phi(U) + self.alpha * anchor_sq

    def anchor_value(self) -> float:
        return float(sum(f(self.anchor) for f in self.functions))


def build_penalized(
    functions: Sequence[Expr],
    anchor,
    rho: float,
    eps: float,
    eps_prime: float,
    eta_prime: float,
    c_lower: float,
    delta_prime: float,
) -> PenalizedObjective:
    """Penalized objective with alpha = eps'/rho^2, xi = eps - 2 eps'/rho and
    gamma = (sum f(anchor) - m c_lower)/eta' + 1."""
    if not 0 < eps_prime < eps * delta_prime / 2:
        raise ParameterError("need 0 < eps' < eps * delta' / 2")
    if not 2 * eps_prime / eps < rho < delta_prime:
        raise ParameterError("need 2 eps'/eps < rho < delta'")
    if eta_prime <= 0:
        raise ParameterError("eta' must be positive")
    anchor = np.atleast_1d(np.asarray(anchor, dtype=float))
    fs = list(functions)
    total = float(sum(f(anchor) for f in fs))
    if not np.isfinite(total):
        raise ParameterError("anchor outside the common domain")
    if total < len(fs) * c_lower:
        raise ParameterError("c_lower exceeds the anchor values")
    gamma = (total - len(fs) * c_lower) / eta_prime + 1.0
    return PenalizedObjective(
        functions=fs,
        anchor=anchor,
        gamma=gamma,
        alpha=eps_prime / rho**2,
        xi=eps - 2 * eps_prime / rho,
        rho=rho,
        eta=eta_prime,
        eps=eps,
        eps_prime=eps_prime,
        c_lower=c_lower,
    )


def ball_grid(center, radius: float, per_axis: int, closed: bool = True) -> np.ndarray:
    """Product grid over the box around ``center`` cut to the closed ball; always holds the center."""
    c = np.atleast_1d(np.asarray(center, dtype=float))
    per_axis = max(per_axis | 1, 3)
    ax = np.linspace(-radius, radius, per_axis)
    mesh = np.stack(np.meshgrid(*([ax] * c.size), indexing="ij"), axis=-1).reshape(-1, c.size)
    r = np.linalg.norm(mesh, axis=1)
    keep = r <= radius * (1 + 1e-12) if closed else r < radius
    return c[None, :] + mesh[keep]


@dataclass
class EkelandProductResult:
    points: np.ndarray
    value_hat: float
    sum_at_point: float
    sum_at_anchor: float
    diam: float
    anchor_dist: float
    heuristic: bool
    grid_size: int
    mesh: float
    checks: dict = field(default_factory=dict)


def ekeland_step_on_product(
    obj: PenalizedObjective,
    per_copy: Optional[Sequence[np.ndarray]] = None,
    per_axis: int = 33,
    max_product: int = 40000,
    start=None,
    rng: Optional[np.random.Generator] = None,
) -> EkelandProductResult:
    """Grid Ekeland point of the penalized objective with slope xi, with the
    sum-decrease, diameter and anchor bounds asserted on the output."""
    m, n = obj.m, obj.anchor.size
    if per_copy is None:
        G = None
        for pa in range(max(per_axis | 1, 3), 2, -2):
            G = ball_grid(obj.anchor, obj.rho, pa)
            if G.shape[0] ** m <= max_product or m * n > 6:
                break
        per_copy = [G] * m
    per_copy = [np.atleast_2d(np.asarray(g, float)) for g in per_copy]
    for g in per_copy:
        if np.any(np.linalg.norm(g - obj.anchor[None], axis=1) > obj.rho * (1 + 1e-9)):
            raise ValueError("per-copy grids must lie in the closed rho-ball around the anchor")
    sizes = [g.shape[0] for g in per_copy]
    total = int(np.prod([float(s) for s in sizes]))
    heuristic = total > max_product
    start_tuple = np.repeat(obj.anchor[None, :], m, axis=0) if start is None else np.asarray(start, float)
    if heuristic:
        rng = rng if rng is not None else np.random.default_rng(0)
        idx = np.stack([rng.integers(0, s, size=max_product) for s in sizes], axis=1)
        idx = np.unique(idx, axis=0)
        P = np.stack([per_copy[c][idx[:, c]] for c in range(m)], axis=1)
        space = GridSpace(np.concatenate([start_tuple[None], P]))
    else:
        space = GridSpace.product(per_copy)
    try:
        s = space.index_of(start_tuple)
    except KeyError:
        space = GridSpace(np.concatenate([start_tuple[None], space.points]))
        s = 0
    values = obj.phi_hat(space.points)
    k = ekeland_on_grid(values, space, s, obj.xi)
    X = space.points[k]
    fsum = float(obj.sum_values(X[None])[0])
    f0 = obj.anchor_value()
    dm = float(pairwise_max_dist(X))
    ad = float(np.linalg.norm(X - obj.anchor[None], axis=1).max())
    lhs = obj.gamma * dm + obj.alpha * ad**2
    checks = {
        "sum_decrease": fsum <= f0 + 1e-12,
        "diameter": dm < obj.eta,
        "anchor": ad < obj.rho,
        "penalty_chain": lhs <= f0 - fsum + 1e-12,
    }
    mesh = max(float(np.ptp(g[:, 0])) / max(len(np.unique(g[:, 0])) - 1, 1) for g in per_copy)
    res = EkelandProductResult(X, float(values[k]), fsum, f0, dm, ad, heuristic, len(space), mesh, checks)
    if not all(checks.values()):
        failed = ", ".join(c for c, ok in checks.items() if not ok)
        raise ParameterRegimeTooCoarse(f"grid output violates: {failed}")
    return res
