import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from decoupling.core import (
    FINITE,
    INF,
    Ball,
    Box,
    IndefiniteFormError,
    TailMode,
    WholeSpace,
    diam,
    directed_liminf,
    directed_limsup,
    essentially_interior,
    ext_add,
    ext_sub,
    ext_sum,
    extrapolate_to_zero,
    geometric_tail_limit,
    is_diverging,
    region_grid,
)

reals = st.floats(-1e6, 1e6, allow_nan=False)
points = st.lists(st.tuples(reals, reals), min_size=1, max_size=8)


def test_extended_addition():
    assert ext_add(1.0, INF) == INF
    assert ext_sum([1.0, 2.0, INF]) == INF
    with pytest.raises(IndefiniteFormError):
        ext_add(-INF, 1.0)
    with pytest.raises(IndefiniteFormError):
        ext_sub(INF, INF)
    assert ext_sub(INF, 3.0) == INF


@given(reals, reals)
def test_ext_add_commutes(a, b):
    assert ext_add(a, b) == ext_add(b, a)


def test_diam_basic():
    assert diam([[0, 0], [3, 4]]) == pytest.approx(5.0)
    assert diam([[1.0]]) == 0.0
    with pytest.raises(ValueError):
        diam([])
    with pytest.raises(ValueError):
        diam([[0.0], [0.0, 1.0]])


@given(points, st.tuples(reals, reals), st.randoms(use_true_random=False))
def test_diam_translation_and_permutation_invariant(pts, shift, rnd):
    d = diam(pts)
    moved = [(x + shift[0], y + shift[1]) for x, y in pts]
    shuffled = list(pts)
    rnd.shuffle(shuffled)
    assert diam(shuffled) == pytest.approx(d, abs=1e-9)
    assert diam(moved) == pytest.approx(d, rel=1e-9, abs=1e-6)


def test_regions():
    b = Box((-1, 0), (1, 2))
    assert b.contains(np.array([[0, 1], [2, 1]])).tolist() == [True, False]
    assert b.shrink(0.5) == Box((-0.5, 0.5), (0.5, 1.5))
    assert b.shrink(1.5) is None
    ball = Ball((0.0, 0.0), 1.0)
    assert ball.contains(np.array([[0.5, 0.5], [1, 1]])).tolist() == [True, False]
    w = WholeSpace(Box((-1,), (1,)))
    assert w.contains(np.array([[1e9]])).all()
    assert w.shrink(0.3) is w
    assert essentially_interior(Box((0,), (1,)), 0.6) is None


@given(st.integers(1, 3), st.integers(2, 9))
def test_region_grid_inside(n, density):
    b = Box(tuple([-1.0] * n), tuple([2.0] * n))
    G = region_grid(b, density)
    assert G.shape[1] == n and b.contains(G).all()


def test_directed_limits_finite_mode_uses_last_value():
    assert directed_limsup([3.0, 1.0, 2.0], FINITE).value == 2.0
    assert directed_liminf([3.0, 1.0, 2.0], FINITE).value == 2.0


def test_tail_bounded_limit_has_radius():
    mode = TailMode("tail_bounded", lambda j: 0.5 ** j)
    r = directed_limsup([1.0, 1.5, 1.75, 1.875], mode)
    assert abs(r.value - 2.0) <= r.radius + 1e-12


def test_divergence_detection():
    assert is_diverging([-1.0, -1e3, -1e7])
    assert not is_diverging([-1.0, -1.0, -1.0])


@given(st.floats(-10, 10), st.floats(-10, 10))
def test_extrapolation_exact_on_linear_data(a, b):
    d = [0.5 ** j for j in range(6)]
    v = [a + b * x for x in d]
    assert extrapolate_to_zero(d, v) == pytest.approx(a, abs=1e-8)


def test_extrapolation_passes_infinite_through():
    assert extrapolate_to_zero([1, 0.5], [1.0, INF]) == INF
    assert math.isinf(extrapolate_to_zero([1, 0.5], [-INF, -INF]))


@given(st.floats(-10, 10), st.floats(-10, 10), st.floats(-10, 10))
def test_extrapolation_exact_on_quadratic_monotone_tails(a, b, c):
    d = np.array([0.5 ** j for j in range(3, 7)])
    v = a + b * d + c * d**2
    if not np.all(np.diff(v) * np.sign(v[-1] - v[0]) >= 0):
        return
    assert extrapolate_to_zero(list(d), list(v)) == pytest.approx(a, abs=1e-6 * (1 + abs(b) + abs(c)))


def test_extrapolation_ignores_a_kink_before_the_finest_levels():
    d = [0.25, 0.125, 0.0625, 0.03125]
    v = [max(0.0, 0.125 - x) for x in d]
    assert extrapolate_to_zero(d, v) == pytest.approx(0.125)


@given(st.floats(-100, 100), st.floats(0.05, 10), st.floats(-0.9, 0.9).filter(lambda q: abs(q) > 0.05))
def test_geometric_tail_summed_exactly(a, c, q):
    vals = [a + c * sum(q**j for j in range(n + 1)) for n in range(12)]
    got = geometric_tail_limit(vals)
    if got is None:
        # differences sank into rounding; the prefix is then already the limit
        got = vals[-1]
    assert got == pytest.approx(a + c / (1 - q), rel=1e-7, abs=1e-7)


def test_geometric_tail_leaves_other_chains_alone():
    assert geometric_tail_limit([1.0, 1.0, 1.0, 1.0]) is None
    assert geometric_tail_limit([1 / n for n in range(1, 9)]) is None
    assert geometric_tail_limit([0.0, 1.0, 3.0, 7.0]) is None
    assert geometric_tail_limit([0.0, 1.0]) is None
