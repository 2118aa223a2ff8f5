"""Envelope functions G0, Ginf, their inverses and the a priori bound curves.

``G0(xi) = int_xi^1 g^(-1/m) t^(1/m-1) dt`` bounds Kneser solutions from above
when the integral diverges at zero and ``Ginf(xi) = int_0^xi ...`` bounds
regular solutions from below when it converges.  Inversion is piecewise
linear in log-log coordinates; queries outside the tabulated range are
clamped to the range edge and flagged invalid instead of extrapolated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from . import quad
from .gridfn import GridFunction
from .quad import IntegralVerdict

if TYPE_CHECKING:
    from .conditions import ClassificationReport, ProblemSpec
    from .gridfn import DerivedFunctions

ROLES = ("G0", "Ginf", "G0_inverse", "Ginf_inverse", "upper_bound", "lower_bound")
FIT_DECADES = 2.0
LOG_FIT_RATIO = 2.0


class EnvelopeError(ValueError):
    pass


class NonMonotoneError(EnvelopeError):
    def __init__(self, message: str, index: int):
        self.index = index
        super().__init__(f"{message} (first violation at node {index})")


@dataclass(frozen=True, eq=False)
class EnvelopeCurve:
    role: str
    samples: GridFunction
    C: float | None = None
    valid: np.ndarray | None = field(default=None, repr=False)
    slope: float | None = None
    log_slope: float | None = None

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        valid = np.ones(self.samples.grid.n, bool) if self.valid is None else np.array(self.valid, bool)
        valid.setflags(write=False)
        object.__setattr__(self, "valid", valid)

    @property
    def x(self) -> np.ndarray:
        return self.samples.x

    @property
    def values(self) -> np.ndarray:
        return self.samples.values

    def to_csv(self, path) -> None:
        self.samples.to_csv(path)

    def to_dict(self) -> dict:
        return {"role": self.role, "C": self.C, "slope": self.slope, "log_slope": self.log_slope,
                "valid_nodes": int(self.valid.sum()), "nodes": int(len(self.valid))}


def _zero_integrand(g: GridFunction, m: int) -> GridFunction:
    t = g.x
    return GridFunction(g.grid, g.values ** (-1.0 / m) * t ** (1.0 / m - 1.0), "g^(-1/m) t^(1/m-1)")


def tabulate(g: GridFunction, m: int, which: str, zero_verdict: IntegralVerdict | None = None) -> EnvelopeCurve:
    """G0 or Ginf on the nodes of ``g``'s grid, which must end at t = 1."""
    if which not in ("G0", "Ginf"):
        raise ValueError("which must be 'G0' or 'Ginf'")
    if not math.isclose(g.x[-1], 1.0, rel_tol=1e-9):
        raise EnvelopeError("g must be sampled up to t = 1")
    integrand = _zero_integrand(g, m)
    cum = quad.cumulative(integrand)
    if which == "G0":
        values = quad.cumulative_tail(integrand)
    else:
        if zero_verdict is None:
            zero_verdict = quad.classify_improper_at_zero(integrand, g.x[0])
        if not zero_verdict.convergent:
            raise EnvelopeError(f"Ginf is infinite: the integral at zero is {zero_verdict.kind}")
        below = zero_verdict.tail - quad.integral(integrand, g.x[0], zero_verdict.far_edge)
        values = cum + max(below, 0.0)
    return EnvelopeCurve(which, g.with_values(values, which))


def _check_monotone(values: np.ndarray, increasing: bool) -> None:
    d = np.diff(values)
    bad = np.flatnonzero(d <= 0) if increasing else np.flatnonzero(d >= 0)
    if len(bad):
        raise NonMonotoneError("envelope samples are not strictly monotone", int(bad[0]) + 1)


def inverse(curve: EnvelopeCurve, y) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate the inverse of a G0/Ginf curve at ``y``; returns (xi, in_range)."""
    if curve.role not in ("G0", "Ginf"):
        raise ValueError("only G0 and Ginf curves can be inverted")
    xi_nodes = curve.x
    G = curve.values
    if curve.role == "G0":
        _check_monotone(G, increasing=False)
        # ascending in G: reverse
        Gs, xs = G[::-1], xi_nodes[::-1]
    else:
        _check_monotone(G, increasing=True)
        Gs, xs = G, xi_nodes
    y = np.atleast_1d(np.asarray(y, dtype=float))
    lo, hi = Gs[0], Gs[-1]
    ok = (y >= lo * (1 - 1e-12)) & (y <= hi * (1 + 1e-12))
    yc = np.clip(y, lo, hi)
    out = np.empty_like(yc)
    pos = Gs > 0
    # log-log interpolation where both ends of the cell are positive, linear otherwise
    j = np.clip(np.searchsorted(Gs, yc, side="right") - 1, 0, len(Gs) - 2)
    g0, g1, x0, x1 = Gs[j], Gs[j + 1], xs[j], xs[j + 1]
    both = pos[j] & pos[j + 1] & (yc > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_log = np.log(yc / g0) / np.log(g1 / g0)
        v_log = np.exp(np.log(x0) + t_log * np.log(x1 / x0))
        t_lin = (yc - g0) / (g1 - g0)
        v_lin = x0 + t_lin * (x1 - x0)
    out = np.where(both, v_log, v_lin)
    exact = yc == g1
    out = np.where(exact, x1, out)
    if curve.role == "G0":
        out = np.where(yc == 0, 1.0, out)
    return out, ok


def invert(curve: EnvelopeCurve, y: GridFunction) -> EnvelopeCurve:
    """Inverse of a tabulated envelope applied to the samples of ``y``."""
    xi, ok = inverse(curve, y.values)
    return EnvelopeCurve(curve.role + "_inverse", y.with_values(xi, curve.role + "_inverse"), valid=ok)


def fit_slopes(r: np.ndarray, w: np.ndarray, valid: np.ndarray) -> tuple[float | None, float | None]:
    """Log-log slope over the last two decades of valid nodes, and the slope of
    ln w against ln ln r over the valid nodes whose ln r is at least half its end value.

    The second window is deliberately short: log-power bounds approach their
    exponent only logarithmically slowly.
    """
    good = valid & (w > 0)
    if good.sum() < 3:
        return None, None
    rv, wv = r[good], w[good]
    sel = rv >= rv[-1] / 10.0**FIT_DECADES
    slope = quad.fit_loglog_slope(rv[sel], wv[sel]) if sel.sum() >= 3 else None
    log_slope = None
    big = rv > math.e
    if big.sum() >= 3:
        lr = np.log(rv[big])
        sel2 = lr >= lr[-1] / LOG_FIT_RATIO
        if sel2.sum() >= 3:
            log_slope = quad.fit_loglog_slope(lr[sel2], wv[big][sel2])
    return slope, log_slope


def bound_curve(spec: "ProblemSpec", derived: "DerivedFunctions", report: "ClassificationReport",
                C: float = 1.0) -> EnvelopeCurve:
    """The a priori bound for the report's envelope verdict, sampled on the r-grid."""
    if not C > 0:
        raise ValueError("C must be positive")
    m = spec.m
    radial = report.integrands.get("radial")
    if radial is None:
        r = derived.f.x
        radial = GridFunction(derived.f.grid, r ** (m - 1) * derived.f.values, "xi^(m-1) f")
    cum = quad.cumulative(radial)
    if report.verdict == "UpperEnvelopeT23":
        G = tabulate(derived.g, m, "G0")
        y = C * cum ** (1.0 / m)
        role = "upper_bound"
    elif report.verdict == "LowerEnvelopeT24":
        G = tabulate(derived.g, m, "Ginf", report.t211)
        from .conditions import tail_beyond_grid

        tail = quad.cumulative_tail(radial) + tail_beyond_grid(radial, report.t221)
        y = C * np.maximum(tail, 0.0) ** (1.0 / m)
        role = "lower_bound"
    else:
        raise EnvelopeError(f"no envelope for verdict {report.verdict}")
    xi, ok = inverse(G, y)
    samples = radial.with_values(xi, f"{role}(C={C:.17g})")
    slope, log_slope = fit_slopes(samples.x, xi, ok)
    return EnvelopeCurve(role, samples, C=float(C), valid=ok, slope=slope, log_slope=log_slope)
