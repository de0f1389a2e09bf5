"""Deterministic local search primitives shared by the estimators."""
from __future__ import annotations

from functools import lru_cache
from typing import Callable

import numpy as np

from .core import INF


@lru_cache(maxsize=32)
def unit_ball_points(n: int, count: int, seed: int = 12345) -> np.ndarray:
    """Fixed point set in the open unit ball: center, near-boundary axis points, random fill."""
    rng = np.random.default_rng(seed)
    e = np.eye(n)
    pts = [np.zeros((1, n)), 0.999 * e, -0.999 * e, 0.5 * e, -0.5 * e]
    z = rng.standard_normal((count, n))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    rad = rng.uniform(0, 1, size=(count, 1)) ** (1.0 / n) * 0.999
    pts.append(z * rad)
    out = np.concatenate(pts)
    out.setflags(write=False)
    return out


def compass_minimize(
    fun: Callable[[np.ndarray], np.ndarray],
    X0: np.ndarray,
    step0,
    iters: int = 60,
    checkpoints: int = 3,
    dirs: np.ndarray | None = None,
):
    """Batched compass search; returns points, values and the best value at
    evenly spaced checkpoints (shape (checkpoints, B)).

    ``fun(X, rows)`` gets the candidate points and, for each, the batch row it
    belongs to.
    """
    X = np.array(X0, dtype=float)
    B, n = X.shape
    vals = fun(X, np.arange(B))
    h = np.broadcast_to(np.asarray(step0, dtype=float), (B,)).copy()
    if dirs is None:
        dirs = np.concatenate([np.eye(n), -np.eye(n)])
    D = dirs.shape[0]
    rows = np.repeat(np.arange(B), D)
    marks = {int(round(iters * (j + 1) / checkpoints)) for j in range(checkpoints)}
    trend = []
    for it in range(1, iters + 1):
        cand = X[:, None, :] + h[:, None, None] * dirs[None, :, :]
        cv = fun(cand.reshape(-1, n), rows).reshape(B, D)
        k = np.argmin(cv, axis=1)
        best = cv[np.arange(B), k]
        better = best < vals
        X[better] = cand[np.arange(B), k][better]
        vals = np.where(better, best, vals)
        h = np.where(better, h, h * 0.5)
        if it in marks:
            trend.append(vals.copy())
    return X, vals, np.array(trend)


def safe_sum(parts: list[np.ndarray]) -> np.ndarray:
    """Elementwise sum where any +inf part gives +inf (never inf - inf)."""
    out = np.zeros_like(parts[0], dtype=float)
    plus = np.zeros(out.shape, dtype=bool)
    for p in parts:
        plus |= p == INF
    with np.errstate(invalid="ignore"):
        for p in parts:
            out = out + np.where(p == INF, 0.0, p)
    out[plus] = INF
    return out


def spawn(seed: int, n: int) -> list[np.random.Generator]:
    """Independent generators split deterministically from one seed."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]
