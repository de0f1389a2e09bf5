"""Corpus integrity plus independent recomputation of every DERIVED value.

The oracles below use nothing from the package except the frozen expectation
table; each value is re-derived with plain numpy grids or closed forms.
"""
import math

import numpy as np
import pytest

from decoupling.corpus import CORPUS, DERIVED, PAPER, TRIVIAL, Expectation, entry, evaluate_expectation


def _expected(entry_id, op):
    return next(x.expected for x in entry(entry_id).expected if x.op == op)


# -- oracles ------------------------------------------------------------------

def _coupled_min(f1, f2, lo, hi, delta, n=4001):
    """min f1(x1)+f2(x2) over a 1-d grid with |x1-x2| <= delta."""
    x = np.linspace(lo, hi, n)
    a, b = f1(x), f2(x)
    h = x[1] - x[0]
    w = int(math.floor(delta / h + 1e-9))
    best = np.inf
    for s in range(-w, w + 1):
        if s >= 0:
            best = min(best, np.min(a[: n - s] + b[s:]))
        else:
            best = min(best, np.min(a[-s:] + b[: n + s]))
    return best


def test_abs_pair_inf_oracle():
    x = np.linspace(-2, 2, 40001)
    got = np.min(np.abs(x) + np.abs(x - 1))
    assert got == pytest.approx(_expected("abs-pair", "inf")[0], abs=1e-12)


def test_abs_pair_lambda_oracle():
    deltas = np.array([0.2, 0.1, 0.05])
    vals = np.array([_coupled_min(np.abs, lambda x: np.abs(x - 1), -2, 2, d) for d in deltas])
    # each level sits at 1 - delta up to the grid spacing
    assert np.allclose(vals, 1 - deltas, atol=1e-3)
    slope, icpt = np.polyfit(deltas, vals, 1)
    assert icpt == pytest.approx(_expected("abs-pair", "lambda")[0], abs=1e-3)
    assert _expected("abs-pair", "delta_value")[0] == pytest.approx(1.0 - icpt, abs=1e-3)


def test_abs_pair_theta_oracle():
    # taking both points equal to the first makes the gap |x1-1| - |x2-1| vanish
    x1 = np.linspace(-2, 2, 101)
    x2 = x1 + np.linspace(-0.05, 0.05, 101)
    gap = (np.abs(x1) + np.abs(x2 - 1)) - (np.abs(x1) + np.abs(x1 - 1))
    assert np.all(gap >= -0.05 - 1e-12)
    assert _expected("abs-pair", "theta")[0] == 0.0


def test_geometric_upper_sum_oracle():
    at, val = _expected("geometric-abs", "upper_sum")
    partial = sum(2.0 ** -t * abs(at) for t in range(200))
    assert partial == pytest.approx(val, rel=1e-12)


def test_geometric_quad_inf_oracle():
    x = np.linspace(-1, 1, 2001)
    total = sum(2.0 ** -t * x**2 for t in range(1, 60))
    assert np.min(total) == pytest.approx(_expected("geometric-quad", "inf")[0], abs=1e-12)


def test_quad_abs_lambda_oracle():
    deltas = [0.2, 0.1, 0.05]
    vals = [_coupled_min(np.square, np.abs, -2, 2, d) for d in deltas]
    # both convex with minimizer 0, so every level is 0
    assert np.allclose(vals, _expected("quad-abs", "lambda")[0], atol=1e-9)


def test_linear_box_inf_oracle():
    x = np.linspace(0, 1, 1001)
    assert np.min(x) == _expected("linear-box", "inf")[0]


def test_plane_pair_inf_oracle():
    g = np.stack(np.meshgrid(np.linspace(-1, 2, 601), np.linspace(-1, 1.5, 501)), -1).reshape(-1, 2)
    v = np.linalg.norm(g, axis=1) + np.linalg.norm(g - [1.0, 0.5], axis=1)
    exp, tol = _expected("plane-pair", "inf")
    assert np.min(v) == pytest.approx(exp, abs=tol)


def test_ball_affine_inf_oracle():
    th = np.linspace(0, 2 * np.pi, 100001)
    r = np.linspace(0, 1, 201)[:, None]
    v = (r * np.cos(th) + r * np.sin(th)).min()
    exp, tol = _expected("ball-affine", "inf")
    assert v == pytest.approx(exp, abs=tol)


# -- table integrity -----------------------------------------------------------

def test_every_expectation_has_valid_provenance():
    for e in CORPUS:
        for x in e.expected:
            assert x.provenance in (PAPER, TRIVIAL, DERIVED)
            if x.provenance == DERIVED:
                assert x.oracle


def test_derived_without_oracle_rejected():
    with pytest.raises(ValueError):
        Expectation("inf", (0.0, 1e-6), DERIVED)
    with pytest.raises(ValueError):
        Expectation("inf", (0.0, 1e-6), "GUESSED")


def test_ids_unique_and_fixtures_load():
    ids = [e.id for e in CORPUS]
    assert len(ids) == len(set(ids))
    for e in CORPUS:
        assert e.load().family is not None


def test_unknown_entry():
    with pytest.raises(KeyError):
        entry("no-such-entry")


_CASES = [(e.id, i) for e in CORPUS for i in range(len(e.expected))]


@pytest.mark.parametrize("entry_id,index", _CASES, ids=[f"{a}-{b}" for a, b in _CASES])
def test_corpus_expectation(entry_id, index):
    e = entry(entry_id)
    row = evaluate_expectation(e, e.expected[index], seed=7)
    assert row["pass"], row
