import numpy as np
import pytest

from decoupling.certify import (
    FAILS,
    HOLDS,
    INCONCLUSIVE,
    Certificate,
    Tolerance,
    certify_firm_uniform_lsc,
    certify_inf_quasi_stability,
    certify_inf_stability,
    certify_quasi_uniform_lsc,
    certify_uniform_lsc,
    certify_weak_delta,
    certify_weak_firm,
    check_characterization,
    check_inf_compact_sufficient,
    check_joint_lsc,
    light_config,
    perturb,
    perturbation_stability_test,
)
from decoupling.core import Box
from decoupling.corpus import entry
from decoupling.functions import AbsCoord, Affine, Blackbox, Const, DistancePenalty, QuadForm, ScaleNonneg
from decoupling.functions.family import FunctionFamily

LINE = Box((-2.0,), (2.0,))
QUAD_ABS = FunctionFamily.finite([QuadForm(((1.0,),), (0.0,), 0.0), AbsCoord(0)], dim=1)
SHIFT_PAIR = FunctionFamily.finite([AbsCoord(0), DistancePenalty((1.0,), 1.0)], dim=1)


def cfg(region=LINE):
    return light_config(region, seed=1)


def test_tolerance_convention():
    t = Tolerance()
    assert t.tol(0.0) == pytest.approx(1e-4)
    assert t.tol(-9.0) == pytest.approx(1e-3)
    assert t.margin(0.0) == pytest.approx(1e-3)
    assert t.tol(float("inf")) == pytest.approx(1e-4)


def test_certificate_contract():
    with pytest.raises(ValueError):
        Certificate("UniformLSC", FAILS)
    with pytest.raises(ValueError):
        Certificate("NotAProperty", HOLDS)
    c = Certificate("UniformLSC", HOLDS, evidence={"value": np.float64(0.5), "x": np.inf})
    assert c.to_json()["evidence"] == {"value": 0.5, "x": "inf"}


@pytest.mark.parametrize("fam", [QUAD_ABS, SHIFT_PAIR], ids=["quad-abs", "shift-pair"])
def test_convex_pairs_hold(fam):
    c = cfg()
    assert certify_uniform_lsc(fam, c).verdict == HOLDS
    assert certify_firm_uniform_lsc(fam, c).verdict == HOLDS
    assert certify_quasi_uniform_lsc(fam, c).verdict == HOLDS
    assert certify_weak_delta(fam, c).verdict == HOLDS
    assert certify_inf_stability(fam, c).verdict == HOLDS


def test_reciprocal_pair_fails_with_witness():
    ff = entry("reciprocal-pair").load()
    cert = certify_uniform_lsc(ff.family, cfg(ff.region))
    assert cert.verdict == FAILS and cert.witness is not None
    assert cert.to_json()["verdict"] == FAILS


def test_characterization_agrees():
    for fam in (QUAD_ABS, SHIFT_PAIR, entry("reciprocal-pair").load().family):
        out = check_characterization(fam, cfg())
        assert out["agree"] and not out["alarm"]


def test_weak_firm_on_a_convex_pair():
    assert certify_weak_firm(QUAD_ABS, cfg()).verdict == HOLDS


def test_quasi_inf_stability_on_geometric_family():
    geo = entry("geometric-abs").load()
    assert certify_inf_quasi_stability(geo.family, cfg(geo.region)).verdict in (HOLDS, INCONCLUSIVE)
    assert certify_inf_stability(geo.family, cfg(geo.region)).verdict != FAILS


def test_joint_lsc_detects_the_steepening_family():
    """max(-1, -2^t |x|): every ball around 0 lets each member dip by 1."""
    steep = FunctionFamily.countable(
        lambda t: Blackbox(lambda x, t=t: max(-1.0, -(2.0**t) * abs(x[0]))), dim=1, tail_kind="monotone", start=0, depth=10
    )
    c = check_joint_lsc(steep, [0.0], cfg(Box((-1.0,), (1.0,))))
    assert c.verdict == FAILS and c.evidence["value"] >= 1.0


def test_joint_lsc_holds_for_lipschitz_families():
    geo = FunctionFamily.countable(
        lambda k: ScaleNonneg(0.5**k, AbsCoord(0)), dim=1, tail_bound=lambda k, r: r * 0.5**k, start=0, depth=16
    )
    assert check_joint_lsc(geo, [0.5], cfg(Box((-1.0,), (1.0,)))).verdict == HOLDS
    assert check_joint_lsc(QUAD_ABS, [0.3], cfg()).verdict == HOLDS


def test_inf_compact_sufficient_never_fails():
    assert check_inf_compact_sufficient(QUAD_ABS, "t1", cfg()).verdict == HOLDS
    lin = FunctionFamily.finite([Affine((1.0,), 0.0), AbsCoord(0)], dim=1)
    c = check_inf_compact_sufficient(lin, "t1", cfg())
    assert c.verdict == INCONCLUSIVE


def test_constant_perturbation_is_invisible():
    out = perturbation_stability_test(SHIFT_PAIR, "t1", Const(3.0), cfg())
    assert out["identical_trace"] and out["before"] == out["after"] and not out["degraded"]


def test_perturb_wraps_non_constants():
    fam = perturb(QUAD_ABS, "t2", Affine((1.0,), 0.0))
    assert fam.member("t2")([2.0]) == pytest.approx(4.0)
    assert len(fam.enumeration()) == 2
