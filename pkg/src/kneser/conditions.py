"""Assemble integral verdicts into the hypotheses of the four vanishing/envelope theorems."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

from . import funcdsl, quad
from .funcdsl import Expr
from .gridfn import DerivedFunctions, GridFunction, LogGrid, derive_all
from .quad import IntegralVerdict, LimsupEstimate

VERDICTS = ("SingularByT22", "SingularByT21", "UpperEnvelopeT23", "LowerEnvelopeT24", "Undetermined")
SINGULAR = ("SingularByT21", "SingularByT22")


@dataclass(frozen=True)
class ProblemSpec:
    m: int
    a: float
    theta: float
    sigma: float
    q: Expr
    h: Expr
    b: tuple[Expr, ...]
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 2:
            raise ValueError("m must be an integer >= 2")
        if not self.a > 0:
            raise ValueError("a must be positive")
        if not (self.theta > 1 and self.sigma > 1):
            raise ValueError("theta and sigma must exceed 1")
        if len(self.b) != self.m - 1:
            raise ValueError(f"need m-1 = {self.m - 1} coefficients b_i, got {len(self.b)}")
        object.__setattr__(self, "b", tuple(self.b))
        object.__setattr__(self, "params", dict(self.params))

    @classmethod
    def from_text(cls, m, a, q, h, b: Sequence[str], params=None, theta=4.0, sigma=4.0) -> "ProblemSpec":
        return cls(
            m=int(m), a=float(a), theta=float(theta), sigma=float(sigma),
            q=funcdsl.parse(q, "r"), h=funcdsl.parse(h, "t"),
            b=tuple(funcdsl.parse(bi, "r") for bi in b), params=dict(params or {}),
        )

    def scaled_q(self, c: float) -> "ProblemSpec":
        q = funcdsl.Binary("*", funcdsl.Const(float(c)), self.q)
        return ProblemSpec(self.m, self.a, self.theta, self.sigma, q, self.h, self.b, self.params)

    def to_dict(self) -> dict:
        return {
            "m": self.m, "a": self.a, "theta": self.theta, "sigma": self.sigma,
            "q": funcdsl.serialize(self.q), "h": funcdsl.serialize(self.h),
            "b": [funcdsl.serialize(bi) for bi in self.b],
            "params": {k: self.params[k] for k in sorted(self.params)},
        }


@dataclass(frozen=True)
class Grids:
    r_max: float = 1e6
    t_min: float = 1e-12
    points_per_decade: int = 256

    def r_grid(self, a: float) -> LogGrid:
        return LogGrid(a, self.r_max, self.points_per_decade)

    def t_grid(self) -> LogGrid:
        return LogGrid(self.t_min, 1.0, self.points_per_decade)

    def refined(self, factor: int = 2) -> "Grids":
        return Grids(self.r_max, self.t_min, self.points_per_decade * factor)


@dataclass(frozen=True, eq=False)
class ClassificationReport:
    t211: IntegralVerdict
    t212: IntegralVerdict
    t221: IntegralVerdict
    t222: LimsupEstimate
    t241: LimsupEstimate | None
    verdict: str
    applicable: tuple[str, ...]
    notes: str
    derived: DerivedFunctions = field(repr=False)
    integrands: dict = field(repr=False, default_factory=dict)

    @property
    def singular(self) -> bool:
        return self.verdict in SINGULAR

    def to_dict(self) -> dict:
        return {
            "verdicts": {
                "t211": self.t211.to_dict(),
                "t212": self.t212.to_dict(),
                "t221": self.t221.to_dict(),
                "t222": self.t222.to_dict(),
                "t241": None if self.t241 is None else self.t241.to_dict(),
            },
            "verdict": self.verdict,
            "applicable": list(self.applicable),
            "notes": self.notes,
        }


def _finite(est: LimsupEstimate | None) -> bool:
    return est is not None and est.finite


def decide(t211, t212, t221, t222, t241) -> tuple[str, tuple[str, ...], list[str]]:
    """Verdict from the sub-verdicts; also returns every applicable theorem."""
    applicable = []
    notes = []
    if t211.convergent and t221.divergent and _finite(t222):
        applicable.append("SingularByT22")
    if t211.convergent and t212.divergent:
        applicable.append("SingularByT21")
    if t211.divergent and t221.divergent and _finite(t222):
        applicable.append("UpperEnvelopeT23")
    if t211.convergent and t221.convergent and _finite(t241):
        applicable.append("LowerEnvelopeT24")
    for name, v in (("t211", t211), ("t212", t212), ("t221", t221)):
        if v.kind == "Inconclusive":
            notes.append(f"{name} inconclusive: {v.diagnostic}")
    if t222.trend == "growing":
        notes.append("t222 limsup ratio is growing")
    if t241 is not None and not t241.finite:
        notes.append("t241 limsup ratio is not finite")
    verdict = next((v for v in VERDICTS if v in applicable), "Undetermined")
    if len(applicable) > 1:
        notes.append("applicable: " + ", ".join(applicable))
    if verdict == "Undetermined" and not notes:
        notes.append("no theorem's hypotheses are met")
    return verdict, tuple(applicable), notes


def check_all(spec: ProblemSpec, grids: Grids | None = None, tol: float = 1e-9) -> ClassificationReport:
    grids = grids or Grids()
    r_grid = grids.r_grid(spec.a)
    t_grid = grids.t_grid()
    d = derive_all(spec, r_grid, t_grid)
    m = spec.m
    t = t_grid.nodes
    r = r_grid.nodes

    zero_integrand = GridFunction(t_grid, d.g.values ** (-1.0 / m) * t ** (1.0 / m - 1.0), "g^(-1/m) t^(1/m-1)")
    radial = GridFunction(r_grid, r ** (m - 1) * d.f.values, "xi^(m-1) f")
    radial_mu = GridFunction(r_grid, radial.values * d.mu.values ** (1.0 / m - 1.0), "xi^(m-1) f mu^(1/m-1)")
    numerator = GridFunction(r_grid, r**m * d.f.values, "r^m f")

    t211 = quad.classify_improper_at_zero(zero_integrand, grids.t_min, tol)
    t212 = quad.classify_improper_at_infinity(radial_mu, spec.a, grids.r_max, tol)
    t221 = quad.classify_improper_at_infinity(radial, spec.a, grids.r_max, tol)
    t222 = quad.estimate_limsup_ratio(numerator, "from_a", radial)
    t241 = None
    if t221.convergent:
        t241 = quad.estimate_limsup_ratio(numerator, "tail", radial, tail_beyond=tail_beyond_grid(radial, t221))
    verdict, applicable, notes = decide(t211, t212, t221, t222, t241)
    return ClassificationReport(
        t211=t211, t212=t212, t221=t221, t222=t222, t241=t241, verdict=verdict,
        applicable=applicable, notes="; ".join(notes), derived=d,
        integrands={"zero": zero_integrand, "radial": radial, "radial_mu": radial_mu},
    )


def tail_beyond_grid(gf: GridFunction, verdict: IntegralVerdict) -> float:
    """Integral of ``gf`` past its last node, from a convergent verdict's tail model."""
    if not verdict.convergent:
        raise ValueError("tail requested for a non-convergent integral")
    covered = float(quad.integral_to_end(gf, [verdict.far_edge])[0])
    return max(verdict.tail - covered, 0.0)


def sweep(family: str, param_grid: Mapping[str, Sequence[float]], base: Mapping[str, float] | None = None,
          grids: Grids | None = None, modulated: bool = False, b_zero: bool = False) -> list[dict]:
    """Classify every point of a parameter grid of one example family."""
    from itertools import product

    from .oracles import ExampleFamily, instantiate

    keys = list(param_grid)
    if not keys:
        return []
    rows = []
    for values in product(*(param_grid[k] for k in keys)):
        params = dict(base or {})
        params.update(dict(zip(keys, values)))
        row = {"params": {k: params[k] for k in keys}, "expected": "", "boundary": False}
        try:
            inst = instantiate(ExampleFamily(family, params, modulated, b_zero))
            row["expected"] = inst.expectation.verdict
            row["boundary"] = inst.expectation.near_boundary
            row["verdict"] = check_all(inst.spec, grids).verdict
            row["error"] = ""
        except Exception as exc:  # recorded per point, not fatal
            row["verdict"] = "Error"
            row["error"] = f"{type(exc).__name__}: {exc}"
        row["match"] = row["verdict"] == row["expected"]
        rows.append(row)
    return rows
