"""Example families with closed-form solutions, and numeric oracles for the lemmas.

Each family instance carries the classification a correct implementation
must reproduce, and the exact Kneser solution where one is known.  The
lemma oracles check integral inequalities that the proofs rely on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy.integrate import simpson

from . import funcdsl, quad
from .conditions import Grids, ProblemSpec, tail_beyond_grid
from .funcdsl import Binary, Const, Expr
from .gridfn import GridFunction, LogGrid, derive_all, sample, window_extremum
from .shooting import SemilinearRHS, derive_p

FAMILIES = ("E2.1", "E2.2", "E2.3", "E2.4", "E2.5")
BOUNDARY_MARGIN = 0.25
DEFAULTS = {"B": 1.0, "a": 1.0}
# modulation of q that keeps c1 r^l <= q <= c2 r^l without converging to a multiple of r^l
MODULATION = "(1 + 0.5*exp(-(log(r) - 3)^2))"


class FamilyConstraintError(ValueError):
    pass


@dataclass(frozen=True)
class ExampleFamily:
    id: str
    params: Mapping[str, float] = field(default_factory=dict)
    modulated: bool = False
    b_zero: bool = False

    def __post_init__(self):
        if self.id not in FAMILIES:
            raise FamilyConstraintError(f"unknown family {self.id!r}; expected one of {FAMILIES}")
        object.__setattr__(self, "params", dict(self.params))


@dataclass(frozen=True, eq=False)
class Expectation:
    verdict: str
    exact_solution: Expr | None = None
    exact_exponent: float | None = None
    log_power: bool = False
    near_boundary: bool = False
    distance: float = math.inf


@dataclass(frozen=True, eq=False)
class Instance:
    family: ExampleFamily
    spec: ProblemSpec
    rhs: SemilinearRHS
    expectation: Expectation
    params: Mapping[str, float]


def expected_verdict(e_f: float, log_exp: float, lam: float, h_kind: str = "power",
                     log_family: bool = False) -> tuple[str, float]:
    """Verdict implied by the asymptotics f ~ r^e_f log^log_exp r and h ~ t^lam (or t log^lam(1/t)).

    Also returns the distance to the nearest critical exponent: the power of f
    for the power families, the log exponent for the log families.
    """
    lam_c = 1.0 if h_kind == "power" else 2.0
    zero_convergent = lam < lam_c if h_kind == "power" else lam > lam_c
    if abs(e_f + 2) > 1e-12:
        radial_divergent = e_f > -2
    else:
        radial_divergent = log_exp >= -1
    dist = abs(log_exp + 1) if log_family else abs(e_f + 2)
    dist = min(dist, abs(lam - lam_c))
    if zero_convergent and radial_divergent:
        verdict = "SingularByT22"
    elif radial_divergent:
        verdict = "UpperEnvelopeT23"
    elif zero_convergent:
        verdict = "LowerEnvelopeT24"
    else:
        verdict = "Undetermined"
    return verdict, dist


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise FamilyConstraintError(message)


def instantiate(family: ExampleFamily) -> Instance:
    """Problem spec, right-hand side and expectation for one family member."""
    p = {**DEFAULTS, **family.params}
    _require("lambda" in p, "parameter lambda is required")
    a = float(p["a"])
    p.setdefault("eps", a / math.e)
    lam = float(p["lambda"])
    fid = family.id
    h_kind = "logpow" if fid == "E2.3" else "power"
    h_text = "t*log(1 + 1/t)^lambda" if h_kind == "logpow" else "t^lambda"

    if fid in ("E2.1", "E2.2"):
        _require(lam < 1, f"{fid} needs lambda < 1")
    elif fid == "E2.3":
        _require(lam > 2, "E2.3 needs lambda > 2")
    else:
        _require(lam != 1, f"{fid} needs lambda != 1")

    log_family = fid in ("E2.2", "E2.5")
    gamma_variant = log_family and "gamma" in p
    if gamma_variant:
        p.setdefault("s", -1.0)
        s = float(p["s"])
        _require(family.b_zero or s <= -1, "the gamma variant needs s <= -1")
        q_text, e_q, log_exp = "r^(-2)*log(r/eps)^gamma", -2.0, float(p["gamma"])
    elif log_family:
        _require("nu" in p and "s" in p, f"{fid} needs s and nu")
        s = float(p["s"])
        _require(s > -1, f"{fid} with nu needs s > -1")
        q_text, e_q, log_exp = "r^(s-1)*log(r/eps)^nu", s - 1.0, float(p["nu"])
    else:
        _require("l" in p, f"{fid} needs l")
        p.setdefault("s", 0.0)
        s = float(p["s"])
        q_text, e_q, log_exp = "r^l", float(p["l"]), 0.0

    damped = (not family.b_zero) and s > -1
    e_f = e_q - (s + 1 if damped else 0.0)
    verdict, dist = expected_verdict(e_f, log_exp, lam, h_kind, log_family)
    near = dist < BOUNDARY_MARGIN

    # exponent of the solution (or of w - 1 for the logpow family)
    base = (e_q - s + 1) if damped else (e_q + 2)
    if log_family:
        exponent = (log_exp + 1) / (1 - lam)
    elif fid == "E2.3":
        exponent = base
    else:
        exponent = base / (1 - lam)

    b_text = "B*r^s" if not family.b_zero else "0*r"
    regular_example = fid in ("E2.1", "E2.2", "E2.3") and verdict == "LowerEnvelopeT24"
    exact = None
    if regular_example:
        p["kappa"] = exponent
        if log_family:
            w_text = "log(r/eps)^kappa"
        elif fid == "E2.3":
            w_text = "1 + r^kappa"
        else:
            w_text = "r^kappa"
        use_damping = s > -1 and not gamma_variant and not family.b_zero
        z1_text = "-(r^s)" if use_damping else "0*r"
        b_text = "r^s" if use_damping else "0*r"
        exact = funcdsl.parse(w_text)
        z1 = funcdsl.parse(z1_text)
        p_expr = derive_p(exact, [z1], lam, h_kind)
        q_expr = p_expr
    else:
        q_expr = funcdsl.parse(q_text)
        if family.modulated:
            q_expr = Binary("*", q_expr, funcdsl.parse(MODULATION))
        z1 = funcdsl.parse(b_text)
        p_expr = q_expr
        if fid == "E2.4" and family.b_zero and not family.modulated:
            kk = exponent * (exponent - 1)
            if kk > 0 and exponent < 0:
                p["A"] = kk ** (1.0 / (lam - 1.0))
                p["kappa"] = exponent
                exact = funcdsl.parse("A*r^kappa")

    spec = ProblemSpec(m=2, a=a, theta=float(p.get("theta", 4.0)), sigma=float(p.get("sigma", 4.0)),
                       q=q_expr, h=funcdsl.parse(h_text, "t"), b=(funcdsl.parse(b_text),), params=p)
    rhs = SemilinearRHS(m=2, b=(z1,), p=p_expr, lam=lam, kind=h_kind, params=p)
    expectation = Expectation(verdict=verdict, exact_solution=exact, exact_exponent=exponent,
                              log_power=log_family, near_boundary=near, distance=dist)
    return Instance(family, spec, rhs, expectation, p)


# ------------------------------------------------------------------ oracles


@dataclass(frozen=True)
class OracleResult:
    ratio: float
    lhs: float
    rhs: float
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {"ratio": self.ratio, "lhs": self.lhs, "rhs": self.rhs, "degenerate": self.degenerate}


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(5)


def gauss_cells(fn: Callable[[np.ndarray], np.ndarray], lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Five-point Gauss-Legendre integral of ``fn`` over every cell [lo_k, hi_k]."""
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    pts = mid[:, None] + half[:, None] * _GL_NODES[None, :]
    vals = fn(pts.ravel()).reshape(pts.shape)
    return half * (vals @ _GL_WEIGHTS)


def lemma32_oracle(
    psi: Expr | str,
    alpha: float,
    r1: float,
    r2: float,
    params: Mapping[str, float] | None = None,
    n: int = 10001,
    cell_rule: Callable | None = None,
) -> OracleResult:
    """(int psi)^alpha / int psi kappa^(alpha-1); exactly alpha for any admissible psi.

    The substitution xi = r1 + (r2 - r1) s^(1/alpha) makes psi kappa^(alpha-1) dxi/ds
    bounded at s = 0, so Simpson's rule in s applies.  kappa itself is
    accumulated cell by cell in tau = s^(1/alpha), where its integrand is smooth.
    ``cell_rule`` replaces the per-cell quadrature (negative-control hook).
    """
    if not (0 < alpha < 1):
        raise ValueError("alpha must lie in (0, 1)")
    if not r2 > r1:
        raise ValueError("need r1 < r2")
    psi = funcdsl.parse(psi, "r") if isinstance(psi, str) else psi
    cell_rule = cell_rule or gauss_cells
    L = r2 - r1

    def psi_of(x):
        v = np.broadcast_to(funcdsl.evaluate_array(psi, x, params), np.shape(x)).astype(float)
        if np.any(v < 0):
            bad = int(np.flatnonzero(v < 0)[0])
            raise ValueError(f"psi is negative at xi={np.ravel(x)[bad]!r}")
        return v

    s = np.linspace(0.0, 1.0, n)
    tau = s ** (1.0 / alpha)
    xi = r1 + L * tau
    cells = cell_rule(lambda t: L * psi_of(r1 + L * t), tau[:-1], tau[1:])
    kappa = np.concatenate([[0.0], np.cumsum(cells)])
    total = float(kappa[-1])
    if not total > 0:
        return OracleResult(math.nan, 0.0, 0.0, degenerate=True)
    dxi = (L / alpha) * s ** (1.0 / alpha - 1.0)
    integrand = psi_of(xi) * dxi
    pos = kappa > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        g = np.where(pos, integrand * np.where(pos, kappa, 1.0) ** (alpha - 1.0), 0.0)
    if not pos[0] and np.all(pos[1:4]):
        # bounded limit at s = 0: quadratic extrapolation
        g[0] = 3 * g[1] - 3 * g[2] + g[3]
    rhs = float(simpson(g, x=s))
    lhs = total**alpha
    return OracleResult(lhs / rhs, lhs, rhs)


def lemma34_oracle(
    u: Expr | str,
    lambda_w: float,
    m: int,
    t1: float,
    t2: float,
    params: Mapping[str, float] | None = None,
    points_per_decade: int = 2048,
) -> OracleResult:
    """(int v^(-1/m) t^(1/m-1))^m / int 1/u over [t1, t2], v the windowed infimum of u."""
    if not lambda_w > 1:
        raise ValueError("lambda_w must exceed 1")
    if not (t1 > 0 and t2 >= lambda_w * t1 * (1 - 1e-12)):
        raise ValueError("need t1 > 0 and t2 >= lambda_w * t1")
    u = funcdsl.parse(u, "t") if isinstance(u, str) else u
    grid = LogGrid(t1 / lambda_w, t2 * lambda_w * (1 + 1e-12), points_per_decade)
    ug = sample(u, grid, params, "u")
    if np.any(ug.values <= 0):
        bad = int(np.flatnonzero(ug.values <= 0)[0])
        raise ValueError(f"u is non-positive at t={grid.nodes[bad]!r}")
    v = window_extremum(ug, 1.0 / lambda_w, lambda_w, "inf")
    t = grid.nodes
    left = GridFunction(grid, v.values ** (-1.0 / m) * t ** (1.0 / m - 1.0))
    right = GridFunction(grid, 1.0 / ug.values)
    lhs = quad.integral(left, t1, t2) ** m
    rhs = quad.integral(right, t1, t2)
    return OracleResult(lhs / rhs, lhs, rhs)


def lemma34_family() -> list[str]:
    """Fixed test family: powers, logarithms and bumps."""
    fam = [f"t^({p:g})" for p in (-2, -1, -0.5, 0, 0.5, 1, 2)]
    fam += ["log(e_ + t)", "log(e_ + t)^3", "1/log(e_ + t)", "log(e_ + 1/t)"]
    fam += ["1 + 10*exp(-log(t)^2)", "1 - 0.9*exp(-4*log(t)^2)", "t*(1 + 0.5*exp(-log(t/3)^2))"]
    return fam


def lemma34_sweep_family() -> list[str]:
    """Wider family for the brute-force constant: sharp dips and spikes of varying width."""
    fam = list(lemma34_family())
    fam += [f"t^({p:g})" for p in (-4, -3, -1.5, 1.5, 3, 4)]
    for depth in (0.9, 0.99, 0.999):
        for width in (0.05, 0.2, 1.0):
            fam.append(f"1 - {depth:g}*exp(-(log(t)/{width:g})^2)")
    for height in (10, 100, 1000):
        for width in (0.05, 0.2, 1.0):
            fam.append(f"1 + {height:g}*exp(-(log(t)/{width:g})^2)")
    return fam


LEMMA34_INTERVALS = ((0.1, 1.0), (1.0, 1.0), (1.0, 4.0), (0.3, 30.0), (0.01, 100.0))


def _lemma34_cases(lambda_w: float):
    for t1, stretch in LEMMA34_INTERVALS:
        yield t1, t1 * lambda_w * stretch


def lemma34_brute_force(m: int, lambda_w: float, family: list[str] | None = None,
                        points_per_decade: int = 512) -> float:
    """Smallest ratio over a family of u's and intervals with t2 >= lambda_w t1."""
    family = family or lemma34_sweep_family()
    params = {"e_": math.e}
    worst = math.inf
    for u in family:
        for t1, t2 in _lemma34_cases(lambda_w):
            res = lemma34_oracle(u, lambda_w, m, t1, t2, params, points_per_decade)
            worst = min(worst, res.ratio)
    return worst


# frozen output of lemma34_brute_force over lemma34_sweep_family(), rounded down
LEMMA34_CONSTANT = {(2, 2.0): 0.68}


@dataclass(frozen=True)
class DoublingResult:
    value: float
    values: np.ndarray = field(repr=False)
    spread: float = 0.0

    @property
    def stable(self) -> bool:
        return self.spread <= 0.10

    def to_dict(self) -> dict:
        return {"value": self.value, "spread": self.spread, "stable": self.stable}


def doubling_oracle(spec: ProblemSpec, lambda_w: float, direction: str = "from_a",
                    grids: Grids | None = None) -> DoublingResult:
    """Max over the last decade of int_a^{lambda r}/int_a^r (or int_r^inf / int_{lambda r}^inf)."""
    grids = grids or Grids()
    r_grid = grids.r_grid(spec.a)
    d = derive_all(spec, r_grid, grids.t_grid())
    r = r_grid.nodes
    radial = GridFunction(r_grid, r ** (spec.m - 1) * d.f.values, "xi^(m-1) f")
    tail = 0.0
    if direction == "tail":
        verdict = quad.classify_improper_at_infinity(radial, spec.a, grids.r_max)
        if not verdict.convergent:
            raise quad.QuadratureError(f"tail doubling needs a convergent integral, got {verdict.kind}")
        tail = tail_beyond_grid(radial, verdict)
    vals = quad.doubling_ratio(radial, lambda_w, direction, tail)
    if len(vals) == 0 or not np.all(np.isfinite(vals)):
        raise quad.QuadratureError("denominator vanishes")
    top = float(vals.max())
    spread = float((vals.max() - vals.min()) / top)
    return DoublingResult(top, vals, spread)


# ----------------------------------------------------------------- selftest


@dataclass(frozen=True)
class SelftestResult:
    name: str
    passed: bool
    detail: str


def _power_spec(q: str, m: int = 2) -> ProblemSpec:
    return ProblemSpec.from_text(m, 1.0, q, "t^0.5", ["0*r"] * (m - 1))


def run_selftest(tol: float = 1e-6) -> list[SelftestResult]:
    """Oracle suites plus grid and quadrature invariants."""
    out: list[SelftestResult] = []

    def check(name: str, ok: bool, detail: str) -> None:
        out.append(SelftestResult(name, bool(ok), detail))

    for psi, alpha, r1, r2 in (("1", 0.5, 0.0, 1.0), ("r", 1 / 3, 0.0, 1.0), ("exp(r)", 0.7, 0.0, 2.0),
                               ("1 + r^2", 0.25, 1.0, 3.0)):
        res = lemma32_oracle(psi, alpha, r1, r2)
        check(f"lemma32 psi={psi} alpha={alpha:.6g}", abs(res.ratio - alpha) <= tol,
              f"ratio={res.ratio:.17g} expected={alpha:.17g}")
    res = lemma32_oracle("0*r", 0.5, 0.0, 1.0)
    check("lemma32 psi=0 degenerate", res.degenerate, "both sides vanish")

    res = lemma34_oracle("1 + 0*t", 2.0, 2, 1.0, 4.0)
    check("lemma34 u=1 closed form", abs(res.ratio - 4 / 3) <= max(tol, 1e-6) * 4 / 3,
          f"ratio={res.ratio:.17g} expected={4 / 3:.17g}")
    A = LEMMA34_CONSTANT.get((2, 2.0))
    if A is not None:
        worst = min(lemma34_oracle(u, 2.0, 2, t1, t2, {"e_": math.e}, 512).ratio
                    for u in lemma34_family() for t1, t2 in _lemma34_cases(2.0))
        check("lemma34 family above brute-force constant", worst >= A, f"min ratio={worst:.6g} A={A:.6g}")

    rel = max(0.02, tol)
    d = doubling_oracle(_power_spec("1 + 0*r"), 2.0, "from_a")
    check("doubling f=1 from_a", abs(d.value - 4) <= rel * 4, f"ratio={d.value:.6g} expected 4")
    d = doubling_oracle(_power_spec("r^(-2)"), 2.0, "from_a", Grids(r_max=1e20))
    check("doubling f=xi^-2 from_a", abs(d.value - 1) <= rel, f"ratio={d.value:.6g} expected 1")
    d = doubling_oracle(_power_spec("r^(-4)"), 2.0, "tail")
    check("doubling f=xi^-4 tail", abs(d.value - 4) <= rel * 4, f"ratio={d.value:.6g} expected 4")

    spec = ProblemSpec.from_text(2, 1.0, "r^l", "t^lambda", ["B*r^s"], {"l": 0, "s": 0, "lambda": 0.5, "B": 1})
    g = Grids()
    try:
        derive_all(spec, g.r_grid(spec.a), g.t_grid()).check_invariants()
        check("gridfn derived-function invariants", True, "mu = 1 + phi, g <= eta <= h, f <= q")
    except AssertionError as exc:  # pragma: no cover - reported, not raised
        check("gridfn derived-function invariants", False, str(exc))

    v = quad.classify_improper_at_zero(lambda t: t**-0.75, 1e-12)
    check("quad convergent at zero", v.convergent and abs(v.value - 4) <= max(tol, 1e-8) * 4,
          f"int_0^1 t^-0.75 = {v.value!r}")
    v = quad.classify_improper_at_zero(lambda t: 1 / t, 1e-12)
    check("quad divergent at zero", v.divergent, f"int_0^1 dt/t: {v.kind}")
    return out
