import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kneser import quad
from kneser.gridfn import GridFunction, LogGrid


def _gf(fn, lo=1.0, hi=1e6, ppd=256):
    g = LogGrid(lo, hi, ppd)
    return GridFunction(g, fn(g.nodes))


@given(st.floats(-3.0, 3.0), st.floats(1.5, 1e3))
@settings(max_examples=60, deadline=None)
def test_power_laws_are_exact(beta, x2):
    gf = _gf(lambda x: x**beta, 1.0, 1e3, 32)
    got = quad.integral(gf, 1.0, x2)
    exact = math.log(x2) if abs(beta + 1) < 1e-14 else (x2 ** (beta + 1) - 1) / (beta + 1)
    assert got == pytest.approx(exact, rel=1e-10)


def test_second_order_for_smooth_integrand():
    errs = []
    for ppd in (32, 64, 128):
        gf = _gf(lambda x: np.exp(-x), 0.01, 10.0, ppd)
        errs.append(abs(quad.integral(gf, 0.01, 10.0) - (math.exp(-0.01) - math.exp(-10))))
    assert errs[0] / errs[1] == pytest.approx(4, rel=0.15)
    assert errs[1] / errs[2] == pytest.approx(4, rel=0.15)


def test_integrate_error_estimate_bounds_error():
    gf = _gf(lambda x: np.exp(-x), 0.01, 10.0, 64)
    value, err = quad.integrate(gf, 0.013, 7.7)
    exact = math.exp(-0.013) - math.exp(-7.7)
    assert abs(value - exact) <= 3 * err + 1e-15
    neg, _ = quad.integrate(gf, 7.7, 0.013)
    assert neg == -value


def test_integrate_outside_grid():
    gf = _gf(lambda x: x, 1.0, 10.0, 8)
    with pytest.raises(quad.QuadratureError):
        quad.integrate(gf, 0.5, 2.0)


def test_partial_integrals_are_consistent():
    gf = _gf(lambda x: x**-2.5 * (2 + np.sin(np.log(x))), 1.0, 1e6, 64)
    cum = quad.cumulative(gf)
    tail = quad.cumulative_tail(gf)
    assert np.allclose(cum + tail, cum[-1], rtol=1e-12)
    edges = np.geomspace(1.0, 1e6, 13)
    seg = quad.segment_integrals(gf, edges)
    assert seg.sum() == pytest.approx(cum[-1], rel=1e-12)
    ends = quad.integral_to_end(gf, edges[:-1])
    assert np.allclose(ends, np.cumsum(seg[::-1])[::-1], rtol=1e-11)


def test_tail_sum_keeps_small_tails():
    gf = _gf(lambda x: x**-4.0, 1.0, 1e6, 64)
    tail = quad.cumulative_tail(gf)
    r = gf.x
    exact = (r**-3 - 1e-18) / 3
    assert np.allclose(tail[:-1], exact[:-1], rtol=1e-9)


# ---------------------------------------------------------------- classifiers


@pytest.mark.parametrize("beta, kind", [(-0.5, "Convergent"), (-1.5, "Divergent"), (-1.0, "Divergent")])
def test_zero_power_laws(beta, kind):
    v = quad.classify_improper_at_zero(lambda t: t**beta)
    assert v.kind == kind
    if kind == "Convergent":
        assert v.value == pytest.approx(1 / (beta + 1), rel=1e-6)


@pytest.mark.parametrize("beta, kind", [(-1.5, "Convergent"), (-0.5, "Divergent"), (-1.0, "Divergent")])
def test_infinity_power_laws(beta, kind):
    v = quad.classify_improper_at_infinity(lambda r: r**beta, 1.0)
    assert v.kind == kind
    if kind == "Convergent":
        assert v.value == pytest.approx(-1 / (beta + 1), rel=1e-6)
    if beta == -1.0:
        assert v.rate == "log-like"


def test_log_power_tails():
    conv = quad.classify_improper_at_infinity(lambda r: 1 / (r * np.log(r) ** 2.5), math.e, 1e60)
    assert conv.kind == "Convergent"
    assert conv.log_exponent == pytest.approx(-2.5, abs=0.1)
    assert conv.value == pytest.approx(1 / 1.5, rel=0.01)
    div = quad.classify_improper_at_infinity(lambda r: 1 / (r * np.log(r) ** 0.5), math.e, 1e60)
    assert div.kind == "Divergent" and div.rate == "log-like"


def test_near_minus_one_is_inconclusive():
    v = quad.classify_improper_at_infinity(lambda r: 1 / (r * np.log(r) ** 1.02), math.e, 1e60)
    assert v.kind == "Inconclusive"


def test_super_power_growth():
    v = quad.classify_improper_at_infinity(lambda r: np.exp(np.sqrt(r) / 20), 1.0, 1e5)
    assert v.divergent


def test_convergent_value_reports_tail():
    v = quad.classify_improper_at_infinity(lambda r: r**-2.0, 1.0, 1e6)
    assert v.tail == pytest.approx(v.far_edge**-1, rel=1e-6)
    assert v.to_dict()["kind"] == "Convergent"


def test_nonpositive_integrand_raises():
    with pytest.raises(quad.NonPositiveIntegrand):
        quad.classify_improper_at_infinity(lambda r: np.sin(np.log(r)) * r**-2, 1.0, 1e6)


def test_too_short_range():
    with pytest.raises(quad.QuadratureError):
        quad.classify_improper_at_infinity(lambda r: r**-2.0, 1.0, 100.0)


# --------------------------------------------------------------------- limsup


def test_limsup_settles_for_power_law():
    # r^2 f / int_a^r r f with f = r^-1.5 tends to 1/2
    fi = _gf(lambda r: r**-0.5)
    num = _gf(lambda r: r**0.5)
    est = quad.estimate_limsup_ratio(num, "from_a", fi)
    assert est.trend == "settling" and est.finite
    # ratio is sqrt(r) / (2 sqrt(r) - 2), largest at the start of the window
    r0 = est.window_values[0][0]
    assert est.value == pytest.approx(r0**0.5 / (2 * r0**0.5 - 2), rel=1e-6)
    assert est.window_values[-1][1] == pytest.approx(0.5, rel=2e-3)


def test_limsup_growing():
    fi = _gf(lambda r: 1 / r)
    est = quad.estimate_limsup_ratio(_gf(lambda r: r**0.5), "from_a", fi)
    assert est.trend == "growing" and not est.finite


def test_limsup_tail_mode():
    fi = _gf(lambda r: r**-3.0)
    num = _gf(lambda r: r**-2.0)
    est = quad.estimate_limsup_ratio(num, "tail", fi, tail_beyond=1e-12 / 2)
    assert est.value == pytest.approx(2.0, rel=1e-6)


def test_doubling_ratio_power_law():
    fi = _gf(lambda r: r**-0.5)
    vals = quad.doubling_ratio(fi, 2.0)
    x = fi.x
    r = x[(x <= x[-1] / 2 * (1 + 1e-12)) & (x >= x[-1] / 20)]
    assert np.allclose(vals, (np.sqrt(2 * r) - 1) / (np.sqrt(r) - 1), rtol=1e-9)
    tail = quad.doubling_ratio(_gf(lambda r: r**-3.0), 2.0, "tail", tail_beyond=0.5e-12)
    assert np.allclose(tail, 4.0, rtol=1e-9)


def test_fit_loglog_slope():
    x = np.geomspace(1, 100, 10)
    assert quad.fit_loglog_slope(x, 3 * x**-1.7) == pytest.approx(-1.7)
