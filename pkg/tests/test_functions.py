import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from decoupling.core import INF, Ball, Box
from decoupling.functions import (
    AbsCoord,
    Affine,
    AxisNormalCone,
    Blackbox,
    BoxSet,
    Const,
    DistancePenalty,
    IndicatorRegion,
    MaxOf,
    NotConvexError,
    Norm2,
    NormInf,
    PolytopeV,
    QuadForm,
    ReciprocalCoord,
    ScaledBall,
    ScaleNonneg,
    SinglePoint,
    SumOf,
    convexity_spot_check,
    directional_derivative,
    exact_subdifferential,
    frechet_membership_test,
    minkowski,
)
from decoupling.functions.family import FunctionFamily, upper_sum

coord = st.floats(-3, 3, allow_nan=False)

CONVEX_1D = [
    AbsCoord(0),
    QuadForm(((1.0,),), (0.5,), -1.0),
    Affine((2.0,), 1.0),
    DistancePenalty((0.3,), 2.0),
    MaxOf((AbsCoord(0), Const(0.5))),
    SumOf((AbsCoord(0), Affine((0.5,), 0.0))),
    ScaleNonneg(3.0, AbsCoord(0)),
]


def test_values_match_closed_forms():
    X = np.array([[3.0, -4.0], [0.0, 1.0]])
    assert np.allclose(Norm2().values(X), [5.0, 1.0])
    assert np.allclose(NormInf().values(X), [4.0, 1.0])
    assert np.allclose(Affine((1.0, 2.0), 1.0).values(X), [-4.0, 3.0])
    r = ReciprocalCoord(0).values(np.array([[0.5], [-1.0], [0.0]]))
    assert r[0] == pytest.approx(2.0) and r[1] == pytest.approx(-1.0) and r[2] == INF


def test_indicators():
    f = IndicatorRegion(Ball((0.0, 0.0), 1.0))
    v = f.values(np.array([[0.1, 0.1], [2.0, 0.0]]))
    assert v[0] == 0.0 and v[1] == INF


@pytest.mark.parametrize("f", CONVEX_1D, ids=lambda f: type(f).__name__)
@given(lo=coord, width=st.floats(0, 4))
def test_interval_inf_matches_dense_grid(f, lo, width):
    hi = lo + width
    exact = f.interval_inf(lo, hi)
    if exact is None:
        return
    grid = np.linspace(lo, hi, 4001)[:, None]
    assert exact <= f.values(grid).min() + 1e-9
    assert exact >= f.values(grid).min() - 2e-3 * (1 + abs(exact))


@pytest.mark.parametrize("f", CONVEX_1D, ids=lambda f: type(f).__name__)
def test_convex_members_pass_spot_check(f):
    pts = np.linspace(-2, 2, 41)[:, None]
    assert convexity_spot_check(f, pts, np.random.default_rng(0))


def test_spot_check_catches_nonconvex():
    g = Blackbox(lambda x: -abs(x[0]))
    assert not convexity_spot_check(g, np.linspace(-1, 1, 21)[:, None], np.random.default_rng(0))


def test_subdifferential_shapes():
    assert exact_subdifferential(AbsCoord(0), [0.0]) == BoxSet((-1.0,), (1.0,))
    assert exact_subdifferential(AbsCoord(0), [2.0]) == SinglePoint((1.0,))
    assert exact_subdifferential(Norm2(), [0.0, 0.0]) == ScaledBall((0.0, 0.0), 1.0)
    cone = exact_subdifferential(IndicatorRegion(Box((0.0,), (1.0,))), [0.0])
    assert isinstance(cone, AxisNormalCone)
    assert cone.contains([-5.0]) and not cone.contains([1.0])


def test_subdifferential_rejects_nonconvex():
    with pytest.raises((NotConvexError, ValueError)):
        exact_subdifferential(Blackbox(lambda x: -abs(x[0])), [0.0])


@pytest.mark.parametrize("f", CONVEX_1D, ids=lambda f: type(f).__name__)
@given(x=st.floats(-2, 2))
def test_subgradients_are_not_refuted(f, x):
    """Members of the exact subdifferential satisfy the subgradient inequality."""
    sd = exact_subdifferential(f, [x])
    g = sd.project(np.array([0.37]))
    ys = np.linspace(-3, 3, 61)[:, None]
    assert np.all(f.values(ys) >= f([x]) + (ys[:, 0] - x) * g[0] - 1e-9)
    assert not frechet_membership_test(f, [x], g).refuted


# the sampler's finest radius is about 5e-7, so kinks closer than that are invisible
off_kink = st.one_of(st.just(0.0), st.floats(1e-4, 2), st.floats(-2, -1e-4))


@given(x=off_kink, excess=st.floats(0.05, 3))
def test_points_outside_are_refuted(x, excess):
    f = AbsCoord(0)
    sd = exact_subdifferential(f, [x])
    out = sd.support(np.array([1.0])) + excess
    assert frechet_membership_test(f, [x], [out]).refuted


@given(st.lists(coord, min_size=2, max_size=2), st.lists(coord, min_size=2, max_size=2))
def test_directional_derivative_is_support_function(x, d):
    f = SumOf((Norm2(), Affine((0.5, -1.0), 0.0)))
    sd = exact_subdifferential(f, x)
    assert directional_derivative(f, x, d) == pytest.approx(sd.support(np.array(d)), abs=1e-6)


@given(st.lists(coord, min_size=2, max_size=2))
def test_projection_is_idempotent_and_inside(y):
    for s in (BoxSet((-1.0, 0.0), (1.0, 2.0)), ScaledBall((0.5, 0.0), 1.5), PolytopeV(((0.0, 0.0), (1.0, 0.0), (0.0, 1.0)))):
        p = s.project(np.array(y))
        assert s.contains(p, tol=1e-7)
        assert np.allclose(s.project(p), p, atol=1e-7)


def test_minkowski_support_adds():
    a, b = BoxSet((-1.0,), (1.0,)), SinglePoint((2.0,))
    m = minkowski(a, b)
    for d in (np.array([1.0]), np.array([-1.0])):
        assert m.support(d) == pytest.approx(a.support(d) + b.support(d))


def test_finite_family_upper_sum_is_plain_sum():
    fam = FunctionFamily.finite([AbsCoord(0), Const(1.0)], dim=1)
    assert upper_sum(fam, [2.0]).value == pytest.approx(3.0)


def test_countable_upper_sum_within_tail_bound():
    fam = FunctionFamily.countable(
        lambda k: ScaleNonneg(0.5 ** k, AbsCoord(0)), dim=1, tail_bound=lambda k, r: r * 0.5 ** k, start=0, depth=16
    )
    r = upper_sum(fam, [2.0])
    assert abs(r.value - 4.0) <= r.radius + 1e-12
