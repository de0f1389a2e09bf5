"""S-expression syntax for functions and the family file format.

Function grammar (numbers may be arithmetic forms over ``k`` inside
templates)::

    (const c)  (affine (a1 .. an) b)  (quad ((q11 ..) ..) (a1 ..) b)
    (abs i)  (norm2)  (norminf)  (recip i +|-)  (dist (c1 .. cn) w)
    (max e ..)  (sum e ..)  (scale lam e)
    (indicator-box (lo hi) ..)  (indicator-ball (c1 ..) r)
    (sublevel (le (lin a1 ..) (recip r1 ..) c) ..)

Family files hold one ``key := value`` per line, ``#`` starts a comment::

    dim := 1
    t1 := (recip 0 +)
    tk := (scale (^ 2 (- k)) (abs 0))      # countable template in k
    start := 0
    depth := 16
    tail_mode := tail_bounded
    tail_bound := (* r (^ 2 (- k)))       # k = last index, r = ||x||
    witness t1 := (point (/ 1 k))
    region := [-2,2]
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .core import Ball, Box, WholeSpace
from .functions.expr import (
    AbsCoord,
    Affine,
    Blackbox,
    Const,
    Constraint,
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
from .functions.family import FunctionFamily


class DSLError(ValueError):
    def __init__(self, msg: str, line: int = 0, col: int = 0):
        super().__init__(f"{line}:{col}: {msg}" if line else msg)
        self.line, self.col = line, col


@dataclass
class Tok:
    text: str
    line: int
    col: int


@dataclass
class Node:
    """Parsed s-expression: either an atom (``items is None``) or a list."""

    text: Optional[str]
    items: Optional[list]
    line: int
    col: int

    @property
    def is_atom(self):
        return self.items is None


def tokenize(src: str, line0: int = 1, col0: int = 1) -> list[Tok]:
    toks = []
    line, col = line0, col0
    i = 0
    while i < len(src):
        ch = src[i]
        if ch == "\n":
            line, col = line + 1, 1
            i += 1
            continue
        if ch.isspace():
            i += 1
            col += 1
            continue
        if ch in "()":
            toks.append(Tok(ch, line, col))
            i += 1
            col += 1
            continue
        j = i
        while j < len(src) and not src[j].isspace() and src[j] not in "()":
            j += 1
        toks.append(Tok(src[i:j], line, col))
        col += j - i
        i = j
    return toks


def read(src: str, line0: int = 1, col0: int = 1) -> Node:
    toks = tokenize(src, line0, col0)
    if not toks:
        raise DSLError("empty expression", line0, col0)
    node, pos = _read(toks, 0)
    if pos != len(toks):
        t = toks[pos]
        raise DSLError(f"unexpected trailing token {t.text!r}", t.line, t.col)
    return node


def _read(toks, pos):
    t = toks[pos]
    if t.text == "(":
        items = []
        pos += 1
        while True:
            if pos >= len(toks):
                raise DSLError("unbalanced '('", t.line, t.col)
            if toks[pos].text == ")":
                return Node(None, items, t.line, t.col), pos + 1
            child, pos = _read(toks, pos)
            items.append(child)
    if t.text == ")":
        raise DSLError("unexpected ')'", t.line, t.col)
    return Node(t.text, None, t.line, t.col), pos + 1


# --------------------------------------------------------------------------
# numbers


_ARITH = {
    "+": lambda *a: sum(a),
    "*": lambda *a: math.prod(a),
    "-": lambda a, b=None: -a if b is None else a - b,
    "/": lambda a, b: a / b,
    "^": lambda a, b: a ** b,
}


def number(node: Node, env: dict) -> float:
    if node.is_atom:
        if node.text in env:
            return float(env[node.text])
        try:
            return float(node.text)
        except ValueError:
            raise DSLError(f"expected a number, got {node.text!r}", node.line, node.col) from None
    if not node.items or not node.items[0].is_atom or node.items[0].text not in _ARITH:
        raise DSLError("expected a number or arithmetic form", node.line, node.col)
    args = [number(c, env) for c in node.items[1:]]
    try:
        return float(_ARITH[node.items[0].text](*args))
    except (TypeError, ZeroDivisionError) as exc:
        raise DSLError(f"bad arithmetic form: {exc}", node.line, node.col) from None


def vector(node: Node, env: dict) -> tuple:
    if node.is_atom:
        raise DSLError("expected a parenthesised vector", node.line, node.col)
    return tuple(number(c, env) for c in node.items)


# --------------------------------------------------------------------------
# functions


def build(node: Node, env: Optional[dict] = None) -> Expr:
    env = env or {}
    if node.is_atom or not node.items:
        raise DSLError("expected a function form '(head ...)'", node.line, node.col)
    head, args = node.items[0], node.items[1:]
    if not head.is_atom:
        raise DSLError("form head must be a symbol", head.line, head.col)
    h = head.text

    def want(n):
        if len(args) != n:
            raise DSLError(f"'{h}' takes {n} argument(s), got {len(args)}", node.line, node.col)

    try:
        if h == "const":
            want(1)
            return Const(number(args[0], env))
        if h == "affine":
            want(2)
            return Affine(vector(args[0], env), number(args[1], env))
        if h == "quad":
            want(3)
            if args[0].is_atom:
                raise DSLError("quad matrix must be a list of rows", args[0].line, args[0].col)
            Q = [vector(r, env) for r in args[0].items]
            return QuadForm(Q, vector(args[1], env), number(args[2], env))
        if h == "abs":
            want(1)
            return AbsCoord(int(number(args[0], env)))
        if h == "norm2":
            want(0)
            return Norm2()
        if h == "norminf":
            want(0)
            return NormInf()
        if h == "recip":
            want(2)
            s = args[1].text
            if s not in ("+", "-"):
                raise DSLError("recip sign must be + or -", args[1].line, args[1].col)
            return ReciprocalCoord(int(number(args[0], env)), 1 if s == "+" else -1)
        if h == "dist":
            want(2)
            return DistancePenalty(vector(args[0], env), number(args[1], env))
        if h == "max":
            return MaxOf(tuple(build(a, env) for a in args))
        if h == "sum":
            return SumOf(tuple(build(a, env) for a in args))
        if h == "scale":
            want(2)
            return ScaleNonneg(number(args[0], env), build(args[1], env))
        if h == "indicator-box":
            if not args:
                raise DSLError("indicator-box needs at least one (lo hi) pair", node.line, node.col)
            pairs = [vector(a, env) for a in args]
            if any(len(p) != 2 for p in pairs):
                raise DSLError("indicator-box axes are (lo hi) pairs", node.line, node.col)
            return IndicatorRegion(Box(tuple(p[0] for p in pairs), tuple(p[1] for p in pairs)))
        if h == "indicator-ball":
            want(2)
            return IndicatorRegion(Ball(vector(args[0], env), number(args[1], env)))
        if h == "sublevel":
            cons = []
            for a in args:
                if a.is_atom or len(a.items) != 4 or a.items[0].text != "le":
                    raise DSLError("constraint is (le (lin ..) (recip ..) c)", a.line, a.col)
                lin, rec = a.items[1], a.items[2]
                if lin.is_atom or lin.items[0].text != "lin" or rec.is_atom or rec.items[0].text != "recip":
                    raise DSLError("constraint is (le (lin ..) (recip ..) c)", a.line, a.col)
                cons.append(
                    Constraint(
                        tuple(number(c, env) for c in lin.items[1:]),
                        tuple(number(c, env) for c in rec.items[1:]),
                        number(a.items[3], env),
                    )
                )
            return IndicatorSublevel(tuple(cons))
    except DSLError:
        raise
    except ValueError as exc:
        raise DSLError(str(exc), node.line, node.col) from None
    raise DSLError(f"unknown form {h!r}", head.line, head.col)


def parse_function(src: str, env: Optional[dict] = None, line0: int = 1, col0: int = 1) -> Expr:
    return build(read(src, line0, col0), env)


def _num(v: float) -> str:
    v = float(v)
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def _vec(vs) -> str:
    return "(" + " ".join(_num(v) for v in vs) + ")"


def to_sexpr(f: Expr) -> str:
    """Canonical printer; ``parse_function(to_sexpr(f)) == f``."""
    if isinstance(f, Const):
        return f"(const {_num(f.c)})"
    if isinstance(f, Affine):
        return f"(affine {_vec(f.a)} {_num(f.b)})"
    if isinstance(f, QuadForm):
        rows = " ".join(_vec(r) for r in f.Q)
        return f"(quad ({rows}) {_vec(f.a)} {_num(f.b)})"
    if isinstance(f, AbsCoord):
        return f"(abs {f.i})"
    if isinstance(f, Norm2):
        return "(norm2)"
    if isinstance(f, NormInf):
        return "(norminf)"
    if isinstance(f, ReciprocalCoord):
        return f"(recip {f.i} {'+' if f.sign > 0 else '-'})"
    if isinstance(f, DistancePenalty):
        return f"(dist {_vec(f.center)} {_num(f.weight)})"
    if isinstance(f, MaxOf):
        return "(max " + " ".join(to_sexpr(t) for t in f.terms) + ")"
    if isinstance(f, SumOf):
        return "(sum " + " ".join(to_sexpr(t) for t in f.terms) + ")"
    if isinstance(f, ScaleNonneg):
        return f"(scale {_num(f.lam)} {to_sexpr(f.child)})"
    if isinstance(f, IndicatorRegion):
        r = f.region
        if isinstance(r, Box):
            return "(indicator-box " + " ".join(f"({_num(a)} {_num(b)})" for a, b in zip(r.lo, r.hi)) + ")"
        if isinstance(r, Ball):
            return f"(indicator-ball {_vec(r.center)} {_num(r.radius)})"
    if isinstance(f, IndicatorSublevel):
        parts = []
        for c in f.constraints:
            lin = " ".join(_num(v) for v in c.lin)
            rec = " ".join(_num(v) for v in c.recip)
            parts.append(f"(le (lin {lin}) (recip {rec}) {_num(c.const)})")
        return "(sublevel " + " ".join(parts) + ")"
    if isinstance(f, Blackbox):
        raise ValueError("blackbox functions have no textual form")
    raise ValueError(f"cannot print {type(f).__name__}")


# --------------------------------------------------------------------------
# regions

_INTERVAL = re.compile(r"\[\s*([^,\]]+)\s*,\s*([^\]]+)\s*\]")


def parse_region(text: str):
    """``[-2,2]x[0,1]`` box, ``whole:[..]x[..]`` whole space with a search
    window, ``ball:(c1,c2);r`` Euclidean ball."""
    s = text.strip()
    if s.startswith("ball:"):
        body = s[5:]
        try:
            cpart, rpart = body.split(";")
            c = tuple(float(v) for v in cpart.strip().strip("()").split(","))
            return Ball(c, float(rpart))
        except ValueError:
            raise DSLError(f"bad ball region {text!r}") from None
    whole = s.startswith("whole:")
    if whole:
        s = s[6:]
    pairs = _INTERVAL.findall(s)
    if not pairs:
        raise DSLError(f"bad region {text!r}")
    try:
        lo = tuple(float(a) for a, _ in pairs)
        hi = tuple(float(b) for _, b in pairs)
    except ValueError:
        raise DSLError(f"bad region {text!r}") from None
    box = Box(lo, hi)
    return WholeSpace(box) if whole else box


def region_text(region) -> str:
    if isinstance(region, WholeSpace):
        return "whole:" + region_text(region.window)
    if isinstance(region, Ball):
        return "ball:(" + ",".join(_num(v) for v in region.center) + f");{_num(region.radius)}"
    return "x".join(f"[{_num(a)},{_num(b)}]" for a, b in zip(region.lo, region.hi))


# --------------------------------------------------------------------------
# family files


@dataclass
class FamilyFile:
    family: FunctionFamily
    region: Optional[object]
    meta: dict


def _strip_comment(line: str) -> str:
    k = line.find("#")
    return line if k < 0 else line[:k]


def parse_family(text: str, name: str = "") -> FamilyFile:
    dim = None
    members: list[tuple[str, Node]] = []
    template = None
    witnesses: dict[str, Node] = {}
    meta: dict = {}
    tail_node = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw)
        if not line.strip():
            continue
        if ":=" not in line:
            raise DSLError("expected 'key := value'", lineno, 1)
        key, _, val = line.partition(":=")
        key = key.strip()
        col = line.index(":=") + 3
        while col - 1 < len(line) and line[col - 1] == " ":
            col += 1
        val = val.strip()
        if key == "dim":
            dim = int(val)
        elif key == "tk":
            template = read(val, lineno, col)
        elif re.fullmatch(r"t\d+", key):
            members.append((key, read(val, lineno, col)))
        elif key.startswith("witness"):
            tid = key.split()[-1]
            witnesses[tid] = read(val, lineno, col)
        elif key == "tail_bound":
            tail_node = read(val, lineno, col)
        elif key in ("tail_mode", "start", "depth", "region", "name", "delta0"):
            meta[key] = val
        else:
            raise DSLError(f"unknown key {key!r}", lineno, 1)
    if dim is None:
        raise DSLError("missing 'dim := n' line")
    if members and template is not None:
        raise DSLError("a family is either listed (t1, t2, ..) or templated (tk)")
    wit = {}
    for tid, node in witnesses.items():
        if node.is_atom or node.items[0].text != "point":
            raise DSLError("witness is (point e1 .. en)", node.line, node.col)
        coords = node.items[1:]

        def gen(k, coords=coords):
            return np.array([number(c, {"k": k}) for c in coords])

        wit[tid] = gen
    # validate the member and witness expressions eagerly
    if members:
        fs = [build(n) for _, n in members]
        for f in fs:
            _check_dim(f, dim)
        fam = FunctionFamily(dim=dim, members=fs, ids=[k for k, _ in members], witnesses=wit, name=meta.get("name", name))
    elif template is not None:
        start = int(meta.get("start", 1))
        build(template, {"k": start})

        def gen(t, template=template):
            return build(template, {"k": t})

        kind = meta.get("tail_mode", "tail_bounded")
        tb = None
        if tail_node is not None:
            number(tail_node, {"k": start, "r": 1.0})

            def tb(k, r, tail_node=tail_node):
                return number(tail_node, {"k": k, "r": r})

        fam = FunctionFamily(
            dim=dim,
            generator=gen,
            start=start,
            depth=int(meta.get("depth", 16)),
            tail_kind=kind,
            tail_bound=tb,
            witnesses=wit,
            name=meta.get("name", name),
        )
    else:
        raise DSLError("family has no members")
    region = parse_region(meta["region"]) if "region" in meta else None
    return FamilyFile(fam, region, meta)


def _check_dim(f: Expr, dim: int):
    try:
        f.values(np.zeros((1, dim)) + 0.5)
    except (IndexError, ValueError) as exc:
        raise DSLError(f"function does not accept {dim}-dimensional points: {exc}") from None


def load_family(path) -> FamilyFile:
    p = Path(path)
    return parse_family(p.read_text(encoding="utf-8"), name=p.stem)
