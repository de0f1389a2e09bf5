"""Indexed families {f_t} and their upper sums along prefix chains."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ..core import (
    FINITE,
    INF,
    ChainSchedule,
    LimitResult,
    Region,
    TailMode,
    as_point,
    directed_limsup,
    geometric_tail_limit,
    region_grid,
)
from .expr import Const, Expr


@dataclass
class FunctionFamily:
    """Finite list of functions, or a countable generator with a tail oracle.

    For a countable family, ``generator(t)`` builds f_t for t = start, start+1, ...
    and ``tail_bound(k, r)`` bounds |sum_{t <= k} f_t(x) - upper sum(x)| for
    every x with ||x|| <= r, where k is the last index of the prefix.
    ``witnesses`` optionally maps each index to a sequence k -> point; they
    are extra starting tuples for the adversarial searches.
    """

    dim: int
    members: Optional[list] = None
    generator: Optional[Callable[[int], Expr]] = None
    start: int = 0
    depth: int = 12
    tail_kind: str = "finite"
    tail_bound: Optional[Callable[[int, float], float]] = None
    witnesses: dict = field(default_factory=dict)
    name: str = ""
    ids: Optional[list] = None

    def __post_init__(self):
        if (self.members is None) == (self.generator is None):
            raise ValueError("give either a finite member list or a generator")
        if self.members is not None:
            self.members = list(self.members)
            if not self.members:
                raise ValueError("empty family")
            if self.ids is None:
                self.ids = [f"t{k + 1}" for k in range(len(self.members))]
            self.tail_kind = "finite"
        else:
            if self.tail_kind not in ("monotone", "tail_bounded", "unknown"):
                raise ValueError("countable families need a tail mode")
            if self.tail_kind == "tail_bounded" and self.tail_bound is None:
                raise ValueError("tail_bounded family without tail_bound")
        self._cache: dict = {}

    @classmethod
    def finite(cls, fs: Sequence[Expr], dim: int, **kw) -> "FunctionFamily":
        return cls(dim=dim, members=list(fs), **kw)

    @classmethod
    def countable(cls, gen, dim: int, tail_kind: str = "tail_bounded", tail_bound=None, **kw):
        return cls(dim=dim, generator=gen, tail_kind=tail_kind, tail_bound=tail_bound, **kw)

    @property
    def is_finite(self) -> bool:
        return self.members is not None

    def enumeration(self) -> list:
        if self.is_finite:
            return list(self.ids)
        return [self.start + j for j in range(self.depth)]

    def chain(self) -> ChainSchedule:
        if self.is_finite:
            return ChainSchedule((tuple(self.ids),))
        return ChainSchedule.from_enumeration(self.enumeration())

    def member(self, t) -> Expr:
        if self.is_finite:
            return self.members[self.ids.index(t)]
        if t not in self._cache:
            self._cache[t] = self.generator(int(t))
        return self._cache[t]

    def restrict(self, S) -> list:
        return [self.member(t) for t in S]

    def tail_mode(self, radius: float = 0.0) -> TailMode:
        if self.is_finite:
            return FINITE
        if self.tail_kind == "tail_bounded":
            enum = self.enumeration()
            return TailMode("tail_bounded", lambda pos: float(self.tail_bound(enum[pos], radius)))
        return TailMode(self.tail_kind)

    def with_member(self, f: Expr, tid: str = "t0", front: bool = False) -> "FunctionFamily":
        """Finite family with one extra function (appended, or prepended when front)."""
        if not self.is_finite:
            fam = CountableWithExtra(self, f, tid)
            return fam
        members = [f] + self.members if front else self.members + [f]
        ids = [tid] + self.ids if front else self.ids + [tid]
        return FunctionFamily(dim=self.dim, members=members, ids=ids, witnesses=dict(self.witnesses), name=self.name)

    def replace_member(self, t, f: Expr) -> "FunctionFamily":
        if not self.is_finite:
            raise ValueError("replace_member on a finite family only")
        members = list(self.members)
        members[self.ids.index(t)] = f
        return FunctionFamily(dim=self.dim, members=members, ids=list(self.ids), witnesses=dict(self.witnesses), name=self.name)

    def partial_sums(self, X) -> np.ndarray:
        """Prefix sums along the chain at a batch of points: shape (depth, N)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = []
        acc = np.zeros(X.shape[0])
        for t in self.enumeration():
            acc = acc + self.member(t).values(X)
            out.append(acc.copy())
        if self.is_finite:
            return np.array(out[-1:])
        return np.array(out)

    def sum_over(self, S, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        acc = np.zeros(X.shape[0])
        for t in S:
            acc = acc + self.member(t).values(X)
        return acc

    def upper_sum_values(self, X) -> np.ndarray:
        """Point estimate of the upper sum at a batch of points (no radius)."""
        P = self.partial_sums(X)
        if self.is_finite or self.tail_kind == "tail_bounded":
            return P[-1]
        if self.tail_kind == "monotone":
            return P.max(axis=0)
        return P[len(P) // 2:].max(axis=0)


class CountableWithExtra(FunctionFamily):
    """A countable family with one extra function placed first in the enumeration."""

    def __init__(self, base: FunctionFamily, extra: Expr, tid):
        self.base = base
        self.extra = extra
        self.extra_id = tid
        super().__init__(
            dim=base.dim,
            generator=base.generator,
            start=base.start,
            depth=base.depth,
            tail_kind=base.tail_kind,
            tail_bound=base.tail_bound,
            witnesses=dict(base.witnesses),
            name=base.name,
        )

    def enumeration(self):
        return [self.extra_id] + self.base.enumeration()

    def member(self, t):
        if t == self.extra_id:
            return self.extra
        return self.base.member(t)

    def tail_mode(self, radius: float = 0.0) -> TailMode:
        if self.tail_kind == "tail_bounded":
            enum = self.enumeration()
            return TailMode(
                "tail_bounded",
                lambda pos: float(self.tail_bound(enum[max(pos, 1)], radius)) if pos >= 1 else INF,
            )
        return TailMode(self.tail_kind)


def upper_sum(family: FunctionFamily, x, schedule: Optional[ChainSchedule] = None) -> LimitResult:
    """Directed upper limit of the prefix sums sum_{t in S} f_t(x)."""
    x = as_point(x, family.dim)
    if schedule is None:
        schedule = family.chain()
    vals = []
    for S in schedule:
        vals.append(float(family.sum_over(S, x[None, :])[0]))
    if vals and vals[-1] == INF and family.is_finite:
        return LimitResult(INF)
    mode = family.tail_mode(float(np.linalg.norm(x)))
    if mode.kind == "finite" and len(vals) > 1:
        mode = FINITE
    res = directed_limsup(vals, mode)
    if mode.kind == "tail_bounded" and math.isfinite(res.radius):
        # the prefix value sits a full tail away from the limit; a geometric
        # tail is summed exactly, kept inside the certified band
        acc = geometric_tail_limit(vals)
        if acc is not None:
            res = LimitResult(min(max(acc, res.value - res.radius), res.value + res.radius), radius=res.radius, note="geometric tail summed")
    return res


@dataclass
class StandingCheck:
    domain_nonempty: bool
    bounded_below: bool
    witness: Optional[np.ndarray]
    min_partial: float


def check_standing_assumptions(family: FunctionFamily, region: Region, density: int = 33) -> StandingCheck:
    """Grid probe: common domain meets the region and partial sums look bounded below."""
    G = region_grid(region, density, max_points=20000)
    vals = family.upper_sum_values(G)
    fin = np.isfinite(vals)
    witness = G[np.argmax(fin)] if fin.any() else None
    P = family.partial_sums(G)
    lowest = float(np.min(P)) if P.size else INF
    return StandingCheck(bool(fin.any()), bool(lowest > -1e12), witness, lowest)


def constant_offset(f: Expr) -> Optional[float]:
    """The constant value if f is a Const node, else None."""
    return float(f.c) if isinstance(f, Const) else None
