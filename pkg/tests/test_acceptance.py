"""Acceptance criteria 1-7.  Each test prints one PASS/FAIL line; the lines are
repeated in the terminal summary.  Run directly for the lines alone:

    python3 tests/test_acceptance.py
"""

import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from kneser import cli, funcdsl, quad
from kneser.conditions import Grids, ProblemSpec, check_all
from kneser.envelope import bound_curve
from kneser.gridfn import LogGrid
from kneser.oracles import (
    LEMMA34_CONSTANT,
    ExampleFamily,
    _lemma34_cases,
    doubling_oracle,
    instantiate,
    lemma32_oracle,
    lemma34_family,
    lemma34_oracle,
)
from kneser.shooting import SemilinearRHS, find_kneser, residual

try:
    from conftest import ACCEPTANCE_LINES
except ImportError:  # run as a script from elsewhere
    ACCEPTANCE_LINES = {}


def report(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[n] = line
    print(line)
    assert ok, line


# ------------------------------------------------------------ grids 1 and 2


def _e21_points():
    for s in (-2.0, 0.0, 1.0):
        for dl in (-2.0, -1.5, -0.5, 0.0, 1.0):
            l = s + dl
            crit = s - 1 if s > -1 else -2.0
            yield "E2.1", {"lambda": 0.5, "s": s, "l": l}, l >= crit, abs(l - crit)


def _e22_points():
    for nu in (-2.0, -1.5, -0.5, 0.0, 1.0):
        yield "E2.2", {"lambda": 0.5, "s": 1.0, "nu": nu}, nu >= -1, abs(nu + 1)
    for gamma in (-2.0, -0.5, 1.0):
        yield "E2.2", {"lambda": 0.5, "gamma": gamma}, gamma >= -1, abs(gamma + 1)


def _grid_check(points, grids=None):
    rows = []
    for fid, params, singular, dist in points:
        rep = check_all(instantiate(ExampleFamily(fid, params)).spec, grids)
        rows.append((params, singular, dist, rep.verdict))
    return rows


def _match(rows):
    off = [r for r in rows if r[2] >= 0.25]
    good = [r for r in off if (r[3] in ("SingularByT21", "SingularByT22")) == r[1]]
    return off, good


def test_criterion_1_example_21_grid():
    t0 = time.perf_counter()
    rows = _grid_check(_e21_points())
    elapsed = time.perf_counter() - t0
    off, good = _match(rows)
    bad = [r[0] for r in off if r not in good]
    report(1, len(good) == len(off) and elapsed < 10,
           f"E2.1 singular boundary {len(good)}/{len(off)} off-boundary points ({len(rows)} total) "
           f"in {elapsed:.2f} s (limit 10 s){'; mismatches ' + str(bad) if bad else ''}")


def test_criterion_2_example_22_grid():
    rows = _grid_check(_e22_points())
    off, good = _match(rows)
    bad = [r[0] for r in off if r not in good]
    report(2, len(good) == len(off),
           f"E2.2 nu and gamma grids {len(good)}/{len(off)} off-boundary points match"
           f"{'; mismatches ' + str(bad) if bad else ''}")


# --------------------------------------------------------- 3 closed forms

CLOSED_FORMS = [
    ("E2.1", {"lambda": 0.5, "s": 0.0, "l": -3.0}),
    ("E2.1", {"lambda": 0.5, "s": 1.0, "l": -1.0}),
    ("E2.1", {"lambda": 0.5, "s": -2.0, "l": -4.0}),
    ("E2.1", {"lambda": 0.5, "s": -2.0, "l": -3.5}),
    ("E2.2", {"lambda": 0.5, "s": 1.0, "nu": -2.0}),
    ("E2.2", {"lambda": 0.5, "s": 1.0, "nu": -1.5}),
    ("E2.2", {"lambda": 0.5, "gamma": -2.0}),
    ("E2.2", {"lambda": 0.5, "s": -2.0, "gamma": -3.0}),
    ("E2.3", {"lambda": 3.0, "s": 0.0, "l": -3.0}),
    ("E2.3", {"lambda": 3.0, "s": -2.0, "l": -3.5}),
]


def _p_exponent(inst):
    """Fitted exponent of the plug-in p: power of r, or power of log(r/eps) after
    removing the r factor.  Log variants approach their exponent like 1/log r,
    so they are fitted far out."""
    pr = inst.params
    p = inst.rhs.p
    if inst.expectation.log_power:
        r = LogGrid(1e100, 1e150, 64).nodes
        vals = funcdsl.evaluate_array(p, r, pr)
        if "gamma" in pr:
            target, reduced = pr["gamma"], vals * r**2
        else:
            target, reduced = pr["nu"], vals / r ** (pr["s"] - 1)
        return quad.fit_loglog_slope(np.log(r / pr["eps"]), reduced), target
    r = LogGrid(1e5, 1e6, 256).nodes
    return quad.fit_loglog_slope(r, funcdsl.evaluate_array(p, r, pr)), pr["l"]


def test_criterion_3_closed_form_residuals():
    worst_res, worst_fit, failures = 0.0, 0.0, []
    for fid, params in CLOSED_FORMS:
        inst = instantiate(ExampleFamily(fid, params))
        w = inst.expectation.exact_solution
        if w is None:
            failures.append((fid, params, "no closed form"))
            continue
        res = float(residual(w, inst.rhs, np.geomspace(inst.spec.a, 1e3, 2000)).max())
        slope, target = _p_exponent(inst)
        worst_res = max(worst_res, res)
        worst_fit = max(worst_fit, abs(slope - target))
        if res > 1e-10 or abs(slope - target) > 0.02:
            failures.append((fid, params, res, slope))
    report(3, not failures,
           f"{len(CLOSED_FORMS)} closed forms: max residual {worst_res:.2e} (limit 1e-10), "
           f"max p exponent error {worst_fit:.4f} (limit 0.02){'; failures ' + str(failures) if failures else ''}")


# ---------------------------------------------------------- 4 extinction


def test_criterion_4_extinction_shooting():
    rhs = SemilinearRHS.from_text("1", 0.5)
    t0 = time.perf_counter()
    sol = find_kneser(rhs, 1.0, (-5.0, 0.0), (0.0, 10.0))
    elapsed = time.perf_counter() - t0
    slope_err = abs(sol.separatrix_slope + 2 / math.sqrt(3))
    ext_err = abs((sol.r_ext or math.nan) - 144**0.25)
    ok = sol.outcome == "Extinct" and slope_err <= 1e-6 and ext_err <= 1e-6 and elapsed < 1.0
    report(4, ok, f"{sol.outcome}: slope error {slope_err:.1e}, extinction radius error {ext_err:.1e} "
                  f"(limit 1e-6), {elapsed:.2f} s (limit 1 s)")


# ----------------------------------------------------------- 5 envelopes

C_VALUES = (0.5, 1.0, 2.0, 4.0)
# the upper bound never exceeds G0^{-1}(0) = 1, so it is compared where the
# solution has settled into its asymptotic regime
ASYMPTOTIC_FROM = 10.0

E25_CASES = [
    {"lambda": 2.0, "s": 0.0, "nu": 1.0},
    {"lambda": 0.5, "s": 1.0, "nu": -2.0},
    {"lambda": 2.0, "s": -2.0, "gamma": 1.0},
    {"lambda": 0.5, "s": -2.0, "gamma": -3.0},
]


def _e24_check(lam, l, w0, bracket, upper):
    inst = instantiate(ExampleFamily("E2.4", {"lambda": lam, "l": l}, b_zero=True))
    rep = check_all(inst.spec)
    sol = find_kneser(inst.rhs, w0, bracket, (inst.spec.a, 100.0))
    slopes, holds = [], []
    for C in C_VALUES:
        bc = bound_curve(inst.spec, rep.derived, rep, C)
        slopes.append(bc.slope)
        r = bc.x
        sel = bc.valid & (r <= sol.r[-1]) & (r >= (ASYMPTOTIC_FROM * inst.spec.a if upper else r[0]))
        w = np.interp(r[sel], sol.r, sol.w)
        holds.append(bool(sel.sum() > 10 and (np.all(w <= bc.values[sel]) if upper
                                                 else np.all(w >= bc.values[sel]))))
    return rep.verdict, sol.outcome, slopes, holds


def test_criterion_5_envelope_exponents():
    parts, ok = [], True
    v, outcome, slopes, holds = _e24_check(2.0, 1.0, 12.0, (-100.0, -1.0), upper=True)
    good = v == "UpperEnvelopeT23" and outcome == "Regular" and all(abs(s + 3) <= 0.05 for s in slopes) and any(holds)
    ok &= good
    parts.append(f"upper slope {slopes[1]:.4f} (-3), shot below bound for C in "
                 f"{[c for c, h in zip(C_VALUES, holds) if h]}")
    v, outcome, slopes, holds = _e24_check(0.5, -3.0, 1 / 36, (-1.0, 0.0), upper=False)
    good = v == "LowerEnvelopeT24" and outcome == "Regular" and all(abs(s + 2) <= 0.05 for s in slopes) and any(holds)
    ok &= good
    parts.append(f"lower slope {slopes[1]:.4f} (-2), shot above bound for C in "
                 f"{[c for c, h in zip(C_VALUES, holds) if h]}")
    grids = Grids(r_max=1e150)
    errs = []
    for params in E25_CASES:
        inst = instantiate(ExampleFamily("E2.5", params))
        rep = check_all(inst.spec, grids)
        if rep.verdict not in ("UpperEnvelopeT23", "LowerEnvelopeT24"):
            errs.append(math.inf)
            continue
        bc = bound_curve(inst.spec, rep.derived, rep, 1.0)
        errs.append(abs(bc.log_slope - inst.expectation.exact_exponent))
    ok &= all(e <= 0.1 for e in errs)
    parts.append(f"E2.5 log exponent errors {[round(e, 3) for e in errs]} (limit 0.1)")
    report(5, ok, "; ".join(parts))


# ------------------------------------------------------------- 6 oracles


def _random_psi(rng):
    c = [float(v) for v in rng.uniform(0.1, 2.0, 4)]
    p = float(rng.uniform(0.0, 3.0))
    k = float(rng.uniform(-1.5, 1.5))
    return f"{c[0]!r} + {c[1]!r}*(1 + r)^{p!r} + {c[2]!r}*exp({k!r}*r) + {c[3]!r}/(1 + r^2)"


def test_criterion_6_quadrature_oracles():
    rng = np.random.default_rng(20261014)
    worst32 = 0.0
    for _ in range(20):
        alpha = float(rng.uniform(0.1, 0.95))
        r1 = float(rng.uniform(0.0, 2.0))
        res = lemma32_oracle(_random_psi(rng), alpha, r1, r1 + float(rng.uniform(0.5, 3.0)))
        worst32 = max(worst32, abs(res.ratio - alpha))
    A = LEMMA34_CONSTANT[(2, 2.0)]
    worst34 = min(lemma34_oracle(u, 2.0, 2, t1, t2, {"e_": math.e}, 512).ratio
                  for u in lemma34_family() for t1, t2 in _lemma34_cases(2.0))

    def spec(q):
        return ProblemSpec.from_text(2, 1.0, q, "t^0.5", ["0*r"])

    d1 = doubling_oracle(spec("1 + 0*r"), 2.0).value
    d2 = doubling_oracle(spec("r^(-2)"), 2.0, grids=Grids(r_max=1e20)).value
    ok = worst32 <= 1e-6 and worst34 >= A and abs(d1 - 4) <= 0.08 and abs(d2 - 1) <= 0.02
    report(6, ok, f"lemma32 max error {worst32:.1e} over 20 random psi (limit 1e-6); "
                  f"lemma34 min ratio {worst34:.4f} >= {A}; doubling f=1 {d1:.4f} (4), f=xi^-2 {d2:.4f} (1)")


# ---------------------------------------------------------- 7 determinism

ANALYZE_CONFIG = """
[problem]
q = "r^l"
h = "t^lambda"
b1 = "B*r^s"
[params]
lambda = 0.5
s = 0
l = -3
B = 1
[shooting]
w0 = 1
bracket = -10, 0
"""


def test_criterion_7_determinism_and_stability(tmp_path):
    cfg = tmp_path / "p.ini"
    cfg.write_text(ANALYZE_CONFIG)
    codes = [cli.main(["analyze", str(cfg), "--out", str(tmp_path / d)]) for d in ("a", "b")]
    same = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
               for f in ("report.json", "curves.csv", "trajectory.csv"))
    points = list(_e21_points()) + list(_e22_points())
    base = _grid_check(points)
    fine = _grid_check(points, Grids().refined(2))
    flips = [b[0] for b, f in zip(base, fine) if b[2] >= 0.25 and b[3] != f[3]]
    report(7, codes == [0, 0] and same and not flips,
           f"repeated analyze byte-identical: {same}; off-boundary verdict flips at 2x points_per_decade: "
           f"{len(flips)}{' ' + str(flips) if flips else ''}")


if __name__ == "__main__":
    sys.path.insert(0, str(Path(__file__).parent))
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
