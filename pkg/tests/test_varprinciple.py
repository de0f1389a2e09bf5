import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from decoupling.functions import AbsCoord, Blackbox, QuadForm
from decoupling.varprinciple import (
    GridSpace,
    ParameterError,
    ParameterRegimeTooCoarse,
    UnboundedBelow,
    ball_grid,
    build_penalized,
    ekeland_on_grid,
    ekeland_step_on_product,
    evp_check,
)


def brute_force_evp(f, P, start, out, eps):
    """Independent loop-based check of the two Ekeland inequalities."""
    if not f[out] <= f[start]:
        return False
    for y in range(len(f)):
        if y == out:
            continue
        d = max(np.linalg.norm(P[y, c] - P[out, c]) for c in range(P.shape[1]))
        if d > 0 and (f[y] - f[out]) + eps * d <= 0:
            return False
    return True


@st.composite
def grid_instances(draw):
    n_pts = draw(st.integers(1, 60))
    copies = draw(st.integers(1, 2))
    dim = draw(st.integers(1, 2))
    P = draw(arrays(np.float64, (n_pts, copies, dim), elements=st.floats(-3, 3)))
    vals = draw(arrays(np.float64, (n_pts,), elements=st.floats(-10, 10)))
    # ties are where tie-breaking matters, so round to make them common
    vals = np.round(vals, draw(st.integers(0, 2)))
    # repeated points are one point of the metric space and share one value
    _, first, inv = np.unique(P.reshape(n_pts, -1), axis=0, return_index=True, return_inverse=True)
    vals = vals[first][inv.ravel()]
    start = draw(st.integers(0, n_pts - 1))
    eps = draw(st.floats(1e-3, 5))
    return P, vals, start, eps


@given(grid_instances())
def test_grid_ekeland_point_passes_brute_force_check(inst):
    P, f, start, eps = inst
    space = GridSpace(P)
    k = ekeland_on_grid(f, space, start, eps)
    assert brute_force_evp(f, P, start, k, eps)
    assert evp_check(f, space, start, k, eps)


@given(grid_instances())
def test_grid_ekeland_is_deterministic(inst):
    P, f, start, eps = inst
    space = GridSpace(P)
    assert ekeland_on_grid(f, space, start, eps) == ekeland_on_grid(f.copy(), GridSpace(P.copy()), start, eps)


def test_ekeland_tie_breaks_by_value_then_lexicographic():
    P = np.array([[0.0], [1.0], [-1.0]])
    # both neighbours give the same penalized value 0 + 1*1; the lexicographically smaller wins
    k = ekeland_on_grid(np.array([1.0, 0.0, 0.0]), GridSpace(P), 0, 1.0)
    assert k == 2


def test_ekeland_input_errors():
    space = GridSpace(np.array([[0.0], [1.0]]))
    with pytest.raises(ValueError):
        ekeland_on_grid(np.array([0.0, 1.0]), space, 0, 0.0)
    with pytest.raises(ValueError):
        ekeland_on_grid(np.array([np.inf, 1.0]), space, 0, 1.0)
    with pytest.raises(UnboundedBelow):
        ekeland_on_grid(np.array([0.0, -1e9]), space, 0, 1.0)


def test_repeated_points_must_share_a_value():
    space = GridSpace(np.array([[0.0], [0.0], [1.0]]))
    assert ekeland_on_grid(np.array([0.0, 0.0, 2.0]), space, 2, 1.0) in (0, 1)
    with pytest.raises(ValueError):
        ekeland_on_grid(np.array([0.0, 1.0, 2.0]), space, 2, 1.0)


def test_product_grid_and_max_metric():
    g = GridSpace.product([np.array([[0.0], [1.0]]), np.array([[0.0], [2.0], [4.0]])])
    assert len(g) == 6 and g.copies == 2
    i = g.index_of([[0.0], [0.0]])
    assert g.dist_from(i).max() == pytest.approx(4.0)
    with pytest.raises(KeyError):
        g.index_of([[0.5], [0.0]])


@given(st.floats(0.01, 2), st.integers(3, 15), st.integers(1, 2))
def test_ball_grid_contains_center_and_stays_in_ball(r, per_axis, n):
    c = np.linspace(-1, 1, n)
    G = ball_grid(c, r, per_axis)
    assert np.any(np.all(np.isclose(G, c), axis=1))
    assert np.all(np.linalg.norm(G - c, axis=1) <= r * (1 + 1e-9))


def test_penalized_parameters():
    fs = [AbsCoord(0), AbsCoord(0)]
    obj = build_penalized(fs, [0.0], rho=0.3, eps=0.5, eps_prime=0.05, eta_prime=0.1, c_lower=-0.5, delta_prime=0.4)
    assert obj.alpha == pytest.approx(0.05 / 0.09)
    assert obj.xi == pytest.approx(0.5 - 2 * 0.05 / 0.3)
    assert obj.gamma == pytest.approx((0.0 + 1.0) / 0.1 + 1.0)
    with pytest.raises(ParameterError):
        build_penalized(fs, [0.0], 0.3, 0.5, 0.2, 0.1, -0.5, 0.4)  # eps' too large
    with pytest.raises(ParameterError):
        build_penalized(fs, [0.0], 0.5, 0.5, 0.05, 0.1, -0.5, 0.4)  # rho >= delta'
    with pytest.raises(ParameterError):
        build_penalized(fs, [0.0], 0.3, 0.5, 0.05, 0.1, 1.0, 0.4)  # c above the anchor values


@pytest.mark.parametrize("fs", [[AbsCoord(0), AbsCoord(0)], [QuadForm(((1.0,),), (-1.0,), 0.0), AbsCoord(0)]])
def test_product_step_meets_its_guarantees(fs):
    obj = build_penalized(fs, [0.0], rho=0.3, eps=0.5, eps_prime=0.05, eta_prime=0.1, c_lower=-0.5, delta_prime=0.4)
    res = ekeland_step_on_product(obj, per_axis=21)
    assert all(res.checks.values())
    assert res.sum_at_point <= res.sum_at_anchor
    assert res.diam < obj.eta and res.anchor_dist < obj.rho


def test_product_step_reports_a_coarse_grid():
    # a steep member with a far-away minimiser: the only grid points are the anchor
    # and a point at distance rho, which violates the strict anchor bound
    f = Blackbox(lambda x: -50.0 * abs(x[0]))
    obj = build_penalized([f], [0.0], rho=0.3, eps=0.5, eps_prime=0.05, eta_prime=0.1, c_lower=-20.0, delta_prime=0.4)
    with pytest.raises(ParameterRegimeTooCoarse):
        ekeland_step_on_product(obj, per_copy=[np.array([[0.0], [0.3]])])
