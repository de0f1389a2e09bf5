import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from decoupling.core import Ball, Box, WholeSpace
from decoupling.corpus import fixtures_dir
from decoupling.dsl import DSLError, load_family, parse_family, parse_function, parse_region, region_text, to_sexpr
from decoupling.functions import AbsCoord, Affine, Const, DistancePenalty, MaxOf, Norm2, QuadForm, ScaleNonneg, SumOf

small = st.floats(-5, 5, allow_nan=False).map(lambda v: round(v, 3))
atoms = st.one_of(
    st.builds(AbsCoord, st.integers(0, 1)),
    st.just(Norm2()),
    st.builds(Const, small),
    st.builds(lambda a, b, c: Affine((a, b), c), small, small, small),
    st.builds(lambda c, w: DistancePenalty((c, 0.0), abs(w)), small, small),
    st.builds(lambda a, b: QuadForm(((abs(a) + 1, 0.0), (0.0, 1.0)), (b, 0.0), 0.0), small, small),
)
exprs = st.recursive(
    atoms,
    lambda kids: st.one_of(
        st.builds(lambda xs: SumOf(tuple(xs)), st.lists(kids, min_size=2, max_size=3)),
        st.builds(lambda xs: MaxOf(tuple(xs)), st.lists(kids, min_size=2, max_size=3)),
        st.builds(lambda lam, k: ScaleNonneg(abs(lam), k), small, kids),
    ),
    max_leaves=6,
)


@given(exprs)
def test_printer_parser_round_trip(f):
    g = parse_function(to_sexpr(f))
    X = np.random.default_rng(0).uniform(-3, 3, size=(25, 2))
    assert np.allclose(f.values(X), g.values(X))
    assert to_sexpr(g) == to_sexpr(f)


@pytest.mark.parametrize(
    "src,where",
    [
        ("(abs 0", "1:1"),
        ("(frob 1)", "1:2"),
        ("(abs 0 1)", "1:1"),
        ("(recip 0 *)", "1:10"),
    ],
)
def test_parse_errors_carry_position(src, where):
    with pytest.raises(DSLError) as info:
        parse_function(src)
    assert str(info.value).startswith(where)


def test_family_file_errors_report_line():
    with pytest.raises(DSLError) as info:
        parse_family("dim := 1\nt1 := (abs 0)\nt2 := (abs\n")
    assert str(info.value).startswith("3:")
    with pytest.raises(DSLError):
        parse_family("t1 := (abs 0)\n")
    with pytest.raises(DSLError):
        parse_family("dim := 1\nbogus := 3\n")


@pytest.mark.parametrize(
    "region",
    [Box((-2.0,), (2.0,)), Box((0.0, -1.0), (1.0, 1.0)), WholeSpace(Box((-1.0, -2.0), (1.0, 2.0))), Ball((0.5, 0.0), 1.5)],
)
def test_region_text_round_trip(region):
    assert parse_region(region_text(region)) == region


def test_every_fixture_loads():
    files = sorted(fixtures_dir().glob("*.fam"))
    assert len(files) >= 8
    for p in files:
        ff = load_family(p)
        assert ff.region is not None
        X = np.zeros((1, ff.family.dim)) + 0.25
        for t in ff.family.enumeration()[:3]:
            ff.family.member(t).values(X)


def test_templated_family_and_witnesses():
    ff = load_family(fixtures_dir() / "reciprocal-pair.fam")
    wit = ff.family.witnesses
    assert set(wit) == {"t1", "t2"}
    assert np.allclose(wit["t1"](10), [0.1]) and np.allclose(wit["t2"](10), [0.01])
    geo = load_family(fixtures_dir() / "geometric-abs.fam").family
    assert not geo.is_finite
    assert geo.member(3)([2.0]) == pytest.approx(2.0 * 2.0 ** -3)
