import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kneser.conditions import Grids, ProblemSpec, check_all, decide, sweep
from kneser.oracles import ExampleFamily, instantiate
from kneser.quad import IntegralVerdict, LimsupEstimate

CONV = IntegralVerdict("Convergent", value=1.0)
DIV = IntegralVerdict("Divergent")
INC = IntegralVerdict("Inconclusive", diagnostic="poor fit")
FIN = LimsupEstimate(1.0, "settling", finite=True)
GROW = LimsupEstimate(10.0, "growing", finite=False)


def _spec(l, s=0.0, lam=0.5, h="t^lambda"):
    return ProblemSpec.from_text(2, 1.0, "r^l", h, ["B*r^s"], {"l": l, "s": s, "lambda": lam, "B": 1.0})


def test_spec_validation():
    with pytest.raises(ValueError):
        ProblemSpec.from_text(1, 1.0, "r", "t", [])
    with pytest.raises(ValueError):
        ProblemSpec.from_text(2, 0.0, "r", "t", ["r"])
    with pytest.raises(ValueError):
        ProblemSpec.from_text(3, 1.0, "r", "t", ["r"])
    with pytest.raises(ValueError):
        ProblemSpec.from_text(2, 1.0, "r", "t", ["r"], theta=1.0)


def test_decide_priority():
    v, applicable, _ = decide(CONV, DIV, DIV, FIN, None)
    assert v == "SingularByT22"
    assert applicable == ("SingularByT22", "SingularByT21")
    assert decide(CONV, DIV, CONV, FIN, FIN)[0] == "SingularByT21"
    assert decide(DIV, DIV, DIV, FIN, None)[0] == "UpperEnvelopeT23"
    assert decide(CONV, CONV, CONV, FIN, FIN)[0] == "LowerEnvelopeT24"


def test_decide_undetermined_explains():
    v, _, notes = decide(DIV, CONV, CONV, FIN, FIN)
    assert v == "Undetermined" and notes
    v, _, notes = decide(INC, DIV, DIV, GROW, None)
    assert v == "Undetermined"
    assert any("t211 inconclusive" in n for n in notes)
    assert any("growing" in n for n in notes)


@pytest.mark.parametrize("l, s, lam, verdict", [
    (-3.0, 0.0, 0.5, "LowerEnvelopeT24"),
    (0.0, 0.0, 0.5, "SingularByT22"),
    (0.0, 0.0, 2.0, "UpperEnvelopeT23"),
    (-3.0, 0.0, 2.0, "Undetermined"),
])
def test_check_all_power_cases(l, s, lam, verdict):
    report = check_all(_spec(l, s, lam))
    assert report.verdict == verdict
    assert set(report.integrands) == {"zero", "radial", "radial_mu"}
    d = report.to_dict()
    assert d["verdict"] == verdict and set(d["verdicts"]) == {"t211", "t212", "t221", "t222", "t241"}


@pytest.mark.parametrize("c", [1e-3, 0.1, 10.0, 1e3])
@pytest.mark.parametrize("l, lam", [(-3.0, 0.5), (0.0, 0.5), (0.0, 2.0)])
def test_scaling_q_keeps_verdict(c, l, lam):
    spec = _spec(l, 0.0, lam)
    assert check_all(spec.scaled_q(c)).verdict == check_all(spec).verdict


@pytest.mark.parametrize("family, params", [
    ("E2.1", {"lambda": 0.5, "s": 0.0, "l": -1.5}),
    ("E2.1", {"lambda": 0.5, "s": 1.0, "l": 2.0}),
    ("E2.2", {"lambda": 0.5, "s": 0.0, "nu": -2.0}),
])
def test_refinement_keeps_verdict(family, params):
    spec = instantiate(ExampleFamily(family, params)).spec
    base = check_all(spec, Grids())
    fine = check_all(spec, Grids().refined(2))
    assert fine.verdict == base.verdict
    for key in ("t211", "t221"):
        a, b = getattr(base, key), getattr(fine, key)
        assert a.kind == b.kind
        if a.convergent:
            assert b.value == pytest.approx(a.value, rel=1e-3)


@given(st.floats(-4.0, 2.0), st.floats(-2.0, 1.5), st.floats(0.1, 0.9))
@settings(max_examples=25, deadline=None)
def test_t21_implies_t22_hypothesis(l, s, lam):
    # mu >= 1 makes the mu-weighted integrand smaller, so its divergence forces the plain one's
    report = check_all(_spec(l, s, lam))
    if report.t212.divergent:
        assert report.t221.divergent
    if "SingularByT21" in report.applicable and report.t222.finite:
        assert "SingularByT22" in report.applicable


def test_sweep_rows():
    rows = sweep("E2.1", {"l": [-3.0, 0.0]}, base={"lambda": 0.5, "s": 0.0})
    assert [r["verdict"] for r in rows] == ["LowerEnvelopeT24", "SingularByT22"]
    assert all(r["match"] for r in rows)


def test_sweep_records_errors():
    rows = sweep("E2.1", {"lambda": [1.5]}, base={"l": 0.0})
    assert rows[0]["verdict"] == "Error" and "FamilyConstraintError" in rows[0]["error"]
    assert not rows[0]["match"]


def test_sweep_empty_grid():
    assert sweep("E2.1", {}) == []
