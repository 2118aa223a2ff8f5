"""Quadrature on geometric grids and convergence classification of improper integrals.

Cell integrals use the log-log linear interpolant of the samples, which is
exact for power laws and second order otherwise.  All partial integrals
(slabs, cumulative sums, arbitrary endpoints) are integrals of that one
interpolant, so they add up consistently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .gridfn import GridFunction, LogGrid

LN2 = math.log(2.0)

# classifier thresholds
R2_MIN = 0.99
MIN_FIT_SLABS = 8
POWER_TOL = 0.02
LOG_EXPONENT_TOL = 0.1
GEOMETRIC_RMS = 1e-4
FIT_RMS = 1e-3


class QuadratureError(ValueError):
    pass


class NonPositiveIntegrand(QuadratureError):
    pass


# ------------------------------------------------------------------ cell rules


def _exprel(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    out = np.ones_like(z)
    big = np.abs(z) > 1e-8
    out[big] = np.expm1(z[big]) / z[big]
    out[~big] = 1.0 + 0.5 * z[~big]
    return out


def _power_piece(x0, y0, y1, h_cell, h_part):
    """Integral of y0*(x/x0)**beta from x0 to x0*exp(h_part); beta fixed by the cell."""
    x0 = np.asarray(x0, dtype=float)
    y0 = np.asarray(y0, dtype=float)
    y1 = np.asarray(y1, dtype=float)
    h_cell = np.asarray(h_cell, dtype=float)
    h_part = np.asarray(h_part, dtype=float)
    pos = (y0 > 0) & (y1 > 0)
    out = np.empty(np.broadcast(x0, y0, y1, h_part).shape)
    out = np.broadcast_to(out, out.shape).copy()
    with np.errstate(divide="ignore", invalid="ignore"):
        beta = np.where(pos, np.log(np.where(pos, y1, 1.0) / np.where(pos, y0, 1.0)) / h_cell, 0.0)
    exact = y0 * x0 * h_part * _exprel((beta + 1.0) * h_part)
    # linear fallback where a sample is zero or negative
    x_end = x0 * np.exp(h_part)
    x1 = x0 * np.exp(h_cell)
    y_end = y0 + (y1 - y0) * (x_end - x0) / (x1 - x0)
    linear = 0.5 * (y0 + y_end) * (x_end - x0)
    out[...] = np.where(pos, exact, linear)
    return out


def cell_integrals(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    h = np.log(x[1:] / x[:-1])
    return _power_piece(x[:-1], y[:-1], y[1:], h, h)


def cumulative(gf: GridFunction) -> np.ndarray:
    """Integral from the first node to every node."""
    out = np.zeros(gf.grid.n)
    np.cumsum(cell_integrals(gf.x, gf.values), out=out[1:])
    return out


def cumulative_at(gf: GridFunction, xq, cum: np.ndarray | None = None) -> np.ndarray:
    """Integral from the first node to arbitrary points inside the grid range."""
    x = gf.x
    y = gf.values
    xq = np.atleast_1d(np.asarray(xq, dtype=float))
    lo, hi = x[0] * (1 - 1e-12), x[-1] * (1 + 1e-12)
    if np.any((xq < lo) | (xq > hi)):
        raise QuadratureError("integration bound outside the grid")
    xq = np.clip(xq, x[0], x[-1])
    if cum is None:
        cum = cumulative(gf)
    j = np.clip(np.searchsorted(x, xq, side="right") - 1, 0, len(x) - 2)
    h_cell = np.log(x[j + 1] / x[j])
    h_part = np.log(xq / x[j])
    return cum[j] + _power_piece(x[j], y[j], y[j + 1], h_cell, h_part)


def cumulative_tail(gf: GridFunction) -> np.ndarray:
    """Integral from every node to the last node, summed from the far end.

    Summing backwards keeps small far-field tails accurate; ``cum[-1] - cum``
    would cancel them away.
    """
    out = np.zeros(gf.grid.n)
    np.cumsum(cell_integrals(gf.x, gf.values)[::-1], out=out[-2::-1])
    return out


def _locate(gf: GridFunction, xq: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    x = gf.x
    xq = np.atleast_1d(np.asarray(xq, dtype=float))
    lo, hi = x[0] * (1 - 1e-12), x[-1] * (1 + 1e-12)
    if np.any((xq < lo) | (xq > hi)):
        raise QuadratureError("integration bound outside the grid")
    xq = np.clip(xq, x[0], x[-1])
    j = np.clip(np.searchsorted(x, xq, side="right") - 1, 0, len(x) - 2)
    return xq, j, np.log(x[j + 1] / x[j])


def integral_to_end(gf: GridFunction, xq) -> np.ndarray:
    """Integral from each point of ``xq`` to the last node, without cancellation."""
    x, y = gf.x, gf.values
    xq, j, h_cell = _locate(gf, xq)
    tail = cumulative_tail(gf)
    cells = cell_integrals(x, y)
    done = _power_piece(x[j], y[j], y[j + 1], h_cell, np.log(xq / x[j]))
    return (cells[j] - done) + tail[j + 1]


def segment_integrals(gf: GridFunction, edges) -> np.ndarray:
    """Integrals over consecutive [edges[k], edges[k+1]], each summed on its own cells."""
    x, y = gf.x, gf.values
    edges = np.asarray(edges, dtype=float)
    e, j, h_cell = _locate(gf, edges)
    cells = cell_integrals(x, y)
    upto = _power_piece(x[j], y[j], y[j + 1], h_cell, np.log(e / x[j]))
    out = np.empty(len(edges) - 1)
    for k in range(len(out)):
        j0, j1 = j[k], j[k + 1]
        if j0 == j1:
            out[k] = upto[k + 1] - upto[k]
        else:
            out[k] = (cells[j0] - upto[k]) + float(np.sum(cells[j0 + 1:j1])) + upto[k + 1]
    return out


def integral(gf: GridFunction, x1: float, x2: float) -> float:
    a, b = cumulative_at(gf, [x1, x2])
    return float(b - a)


def _rule_on_nodes(x: np.ndarray, y: np.ndarray) -> float:
    return float(np.sum(cell_integrals(x, y)))


def integrate(gf: GridFunction, x1: float, x2: float) -> tuple[float, float]:
    """Integral over [x1, x2] with a Richardson (h vs 2h) error estimate."""
    if x2 < x1:
        v, e = integrate(gf, x2, x1)
        return -v, e
    x = gf.x
    if x1 < x[0] * (1 - 1e-12) or x2 > x[-1] * (1 + 1e-12):
        raise QuadratureError(f"[{x1}, {x2}] is outside the grid [{x[0]}, {x[-1]}]")
    value = integral(gf, x1, x2)
    inner = (x > x1) & (x < x2)
    xi, yi = x[inner], gf.values[inner]
    y_ends = _interp_loglog(x, gf.values, np.array([x1, x2]))
    coarse_x = np.concatenate([[x1], xi[1::2], [x2]])
    coarse_y = np.concatenate([[y_ends[0]], yi[1::2], [y_ends[1]]])
    coarse = _rule_on_nodes(coarse_x, coarse_y) if len(coarse_x) > 2 else value
    err = abs(value - coarse) / 3.0
    return value, err


def _interp_loglog(x: np.ndarray, y: np.ndarray, xq: np.ndarray) -> np.ndarray:
    j = np.clip(np.searchsorted(x, xq, side="right") - 1, 0, len(x) - 2)
    x0, x1, y0, y1 = x[j], x[j + 1], y[j], y[j + 1]
    pos = (y0 > 0) & (y1 > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.log(xq / x0) / np.log(x1 / x0)
        logv = np.log(np.where(pos, y0, 1.0)) + t * np.log(np.where(pos, y1 / np.where(pos, y0, 1.0), 1.0))
        lin = y0 + (y1 - y0) * (xq - x0) / (x1 - x0)
    return np.where(pos, np.exp(logv), lin)


def trapezoid_log(x: np.ndarray, y: np.ndarray) -> float:
    """Plain trapezoid rule in u = ln x applied to y(x)*x."""
    x = np.asarray(x, dtype=float)
    g = np.asarray(y, dtype=float) * x
    u = np.log(x)
    return float(np.sum(0.5 * (g[1:] + g[:-1]) * np.diff(u)))


def cumulative_trapezoid(y: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Cumulative linear-space trapezoid rule, starting at 0."""
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(y)
    np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(x), out=out[1:])
    return out


# -------------------------------------------------------------- classification


@dataclass(frozen=True)
class IntegralVerdict:
    kind: str  # Convergent | Divergent | Inconclusive
    value: float | None = None
    rate: str | None = None  # log-like | power | super-power
    power: float | None = None
    log_exponent: float | None = None
    slabs: tuple[float, ...] = ()
    diagnostic: str = ""
    tail: float = 0.0
    tail_err: float = 0.0
    far_edge: float | None = None
    r2: float | None = None

    @property
    def convergent(self) -> bool:
        return self.kind == "Convergent"

    @property
    def divergent(self) -> bool:
        return self.kind == "Divergent"

    def to_dict(self) -> dict:
        d = {
            "kind": self.kind,
            "value": self.value,
            "rate": None if self.rate is None else (
                f"power({self.power:.17g})" if self.rate == "power" else self.rate
            ),
            "slabs": list(self.slabs),
            "diagnostic": self.diagnostic,
        }
        if self.kind == "Convergent":
            d["tail"] = self.tail
            d["tail_err"] = self.tail_err
        d["fit"] = {"power": self.power, "log_exponent": self.log_exponent, "r2": self.r2}
        return d


def _lstsq(design: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, float, float]:
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    ss_res = float(resid @ resid)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot <= 1e-24 * len(y):
        r2 = 1.0 if ss_res <= 1e-20 * len(y) else 0.0
    else:
        r2 = 1.0 - ss_res / ss_tot
    rms = math.sqrt(ss_res / len(y))
    return coef, r2, rms


def _classify_slabs(
    slabs: np.ndarray,
    log_scale: np.ndarray,
    log_scale_end: float,
    tol: float,
) -> IntegralVerdict:
    """Fit ln S_k = A + b*k + c*ln L_k on the far slabs and classify.

    ``log_scale`` holds L_k = |ln x| at slab midpoints; ``log_scale_end`` the
    value at the far edge of the last slab.
    """
    n = len(slabs)
    s_tuple = tuple(float(s) for s in slabs)
    if n < MIN_FIT_SLABS:
        return IntegralVerdict("Inconclusive", slabs=s_tuple, diagnostic=f"only {n} slabs available")
    if np.any(slabs <= 0):
        k = int(np.flatnonzero(slabs <= 0)[0])
        raise NonPositiveIntegrand(f"integrand is non-positive on slab {k}")
    nf = max(MIN_FIT_SLABS, n // 2)
    idx = np.arange(n - nf, n)
    k = idx.astype(float)
    y = np.log(slabs[idx])
    ones = np.ones_like(k)

    coef, r2, rms = _lstsq(np.column_stack([ones, k]), y)
    b, c = float(coef[1]), 0.0
    model = "geometric"
    L = log_scale[idx]
    if rms > GEOMETRIC_RMS and np.all(L > 0):
        coef2, r2_2, rms2 = _lstsq(np.column_stack([ones, k, np.log(L)]), y)
        if rms2 < rms:
            b, c, r2, rms = float(coef2[1]), float(coef2[2]), r2_2, rms2
            model = "geometric+log-power"
    p = b / LN2
    diag = f"model={model} slabs={n} fit_slabs={nf} power={p:.6g} log_exponent={c:.6g} r2={r2:.6g}"
    partial = float(np.sum(slabs))
    d = np.diff(y)

    def convergent(tail: float, tail_alt: float) -> IntegralVerdict:
        value = partial + tail
        tail_err = abs(tail - tail_alt)
        note = diag
        if tail_err > tol * abs(value):
            note += f"; value accuracy limited: tail_err={tail_err:.3g}"
        return IntegralVerdict(
            "Convergent", value=value, power=p, log_exponent=c, slabs=s_tuple, diagnostic=note,
            tail=tail, tail_err=tail_err, r2=r2,
        )

    last_ratio = float(slabs[-1] / slabs[-2])
    geom_tail = slabs[-1] * last_ratio / (1 - last_ratio) if last_ratio < 1 else math.inf

    # R^2 means nothing for nearly constant slabs, so a small residual also counts as a good fit
    if r2 < R2_MIN and rms > FIT_RMS:
        if np.all(d > 0) and np.all(np.diff(d) > 0):
            return IntegralVerdict("Divergent", rate="super-power", power=p, log_exponent=c,
                                   slabs=s_tuple, diagnostic=diag + "; super-geometric growth", r2=r2)
        if np.all(d < 0) and np.all(np.diff(d) < 0):
            return convergent(float(geom_tail), 0.0)
        return IntegralVerdict("Inconclusive", power=p, log_exponent=c, slabs=s_tuple,
                               diagnostic=diag + "; poor fit", r2=r2)
    if p > POWER_TOL:
        return IntegralVerdict("Divergent", rate="power", power=p, log_exponent=c, slabs=s_tuple,
                               diagnostic=diag, r2=r2)
    if p < -POWER_TOL:
        ratio = math.exp(b)
        model_tail = slabs[-1] * ratio / (1 - ratio)
        return convergent(float(model_tail), float(geom_tail))
    if c > -1 + LOG_EXPONENT_TOL:
        return IntegralVerdict("Divergent", rate="log-like", power=p, log_exponent=c, slabs=s_tuple,
                               diagnostic=diag, r2=r2)
    if c < -1 - LOG_EXPONENT_TOL:
        # S_k ~ K L^c ln2 per slab, so the remainder is K L_end^(c+1) / (-c-1)
        big_k = slabs[-1] / (log_scale[-1] ** c * LN2)
        model_tail = big_k * log_scale_end ** (c + 1) / (-c - 1)
        return convergent(float(model_tail), float(geom_tail))
    return IntegralVerdict("Inconclusive", power=p, log_exponent=c, slabs=s_tuple,
                           diagnostic=diag + "; log exponent too close to -1", r2=r2)


def _as_gridfunction(integrand, lo: float, hi: float, ppd: int = 256) -> GridFunction:
    if isinstance(integrand, GridFunction):
        return integrand
    grid = LogGrid(lo, hi, ppd)
    return GridFunction(grid, np.asarray(integrand(grid.nodes), dtype=float), label="integrand")


def classify_improper_at_zero(
    integrand: GridFunction | Callable[[np.ndarray], np.ndarray],
    t_min: float = 1e-12,
    tol: float = 1e-9,
) -> IntegralVerdict:
    """Classify ``int_0^1 integrand`` from dyadic slabs [2^-(k+1), 2^-k]."""
    gf = _as_gridfunction(integrand, t_min, 1.0)
    t_min = max(t_min, gf.x[0])
    if gf.x[-1] < 1 - 1e-9:
        raise QuadratureError("the integrand grid must reach t = 1")
    kmax = int(math.floor(-math.log2(t_min) + 1e-9))
    edges = 2.0 ** -np.arange(0, kmax + 1, dtype=float)
    if edges[-1] < gf.x[0]:
        edges = edges[:-1]
    edges = edges[::-1]  # ascending
    slabs = segment_integrals(gf, edges)[::-1]  # slab 0 is [1/2, 1]
    n = len(slabs)
    mids = -(np.arange(n) + 0.5) * LN2
    verdict = _classify_slabs(slabs, np.abs(mids), float(n * LN2), tol)
    return _with_edge(verdict, float(edges[0]))


def classify_improper_at_infinity(
    integrand: GridFunction | Callable[[np.ndarray], np.ndarray],
    r_start: float,
    r_max: float = 1e6,
    tol: float = 1e-9,
) -> IntegralVerdict:
    """Classify ``int_{r_start}^inf integrand`` from slabs [2^k r_start, 2^(k+1) r_start]."""
    if r_max / r_start < 1e4 * (1 - 1e-12):
        raise QuadratureError("need r_max / r_start >= 1e4")
    gf = _as_gridfunction(integrand, r_start, r_max)
    r_max = min(r_max, gf.x[-1])
    kmax = int(math.floor(math.log2(r_max / r_start) + 1e-9))
    edges = r_start * 2.0 ** np.arange(0, kmax + 1, dtype=float)
    slabs = segment_integrals(gf, edges)
    n = len(slabs)
    mids = np.log(r_start) + (np.arange(n) + 0.5) * LN2
    end = math.log(edges[-1])
    verdict = _classify_slabs(slabs, mids, end, tol)
    return _with_edge(verdict, float(edges[-1]))


def _with_edge(v: IntegralVerdict, edge: float) -> IntegralVerdict:
    return IntegralVerdict(**{**v.__dict__, "far_edge": edge})


# --------------------------------------------------------------------- limsup


SETTLING_SLOPE = 0.01
GROWING_SLOPE = 0.05


@dataclass(frozen=True)
class LimsupEstimate:
    value: float
    trend: str  # settling | growing | oscillating
    window_values: tuple[tuple[float, float], ...] = field(repr=False, default=())
    slope: float = 0.0
    finite: bool = False

    def to_dict(self, include_window: bool = False) -> dict:
        d = {"value": self.value, "trend": self.trend, "slope": self.slope, "finite": self.finite}
        if include_window:
            d["window_values"] = [list(p) for p in self.window_values]
        return d


def estimate_limsup_ratio(
    numerator: GridFunction,
    cumulative_kind: str,
    f_integrand: GridFunction,
    tail_beyond: float = 0.0,
    decades: float = 3.0,
) -> LimsupEstimate:
    """limsup of numerator / (int_a^r f_integrand) or numerator / (int_r^inf f_integrand).

    ``tail_beyond`` is the integral past the last grid node (tail mode only).
    The trend is the least-squares slope of ratio/mean(ratio) against ln r.
    """
    if cumulative_kind not in ("from_a", "tail"):
        raise ValueError("cumulative_kind must be 'from_a' or 'tail'")
    x = numerator.x
    cum = cumulative(f_integrand)
    if cumulative_kind == "from_a":
        den = cum
    else:
        den = cumulative_tail(f_integrand) + tail_beyond
    if not np.any(den > 0):
        raise QuadratureError("denominator vanishes identically")
    window = (x >= x[-1] / 10.0**decades) & (den > 0)
    if window.sum() < 2:
        window = den > 0
    xs = x[window]
    ratio = numerator.values[window] / den[window]
    scale = float(np.mean(np.abs(ratio)))
    if scale > 0:
        slope = float(np.polyfit(np.log(xs), ratio / scale, 1)[0])
    else:
        slope = 0.0
    if abs(slope) < SETTLING_SLOPE:
        trend = "settling"
    elif slope > GROWING_SLOPE:
        trend = "growing"
    else:
        trend = "oscillating"
    last = xs >= xs[-1] / 10.0
    early = ~last
    if trend == "settling":
        finite = True
    elif trend == "oscillating":
        finite = (not early.any()) or bool(ratio[last].max() <= 1.1 * ratio[early].max())
    else:
        finite = False
    pairs = tuple((float(a), float(b)) for a, b in zip(xs, ratio))
    return LimsupEstimate(value=float(ratio.max()), trend=trend, window_values=pairs, slope=slope, finite=finite)


def doubling_ratio(
    f_integrand: GridFunction,
    factor: float,
    direction: str = "from_a",
    tail_beyond: float = 0.0,
    decades: float = 1.0,
) -> np.ndarray:
    """Ratios int_a^{factor r}/int_a^r (or int_r^inf / int_{factor r}^inf) over the last decades
    of admissible r (those with factor*r inside the grid)."""
    x = f_integrand.x
    cum = cumulative(f_integrand)
    top = x[-1] / factor
    r = x[(x <= top * (1 + 1e-12)) & (x >= top / 10.0**decades)]
    c_r = cumulative_at(f_integrand, r, cum)
    c_fr = cumulative_at(f_integrand, np.minimum(r * factor, x[-1]), cum)
    if direction == "from_a":
        ok = c_r > 0
        return c_fr[ok] / c_r[ok]
    t_r = integral_to_end(f_integrand, r) + tail_beyond
    t_fr = integral_to_end(f_integrand, np.minimum(r * factor, x[-1])) + tail_beyond
    return t_r / t_fr


def fit_loglog_slope(x: Sequence[float], y: Sequence[float]) -> float:
    return float(np.polyfit(np.log(np.asarray(x)), np.log(np.asarray(y)), 1)[0])
