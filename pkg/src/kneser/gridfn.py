"""Functions sampled on geometric grids and their windowed extrema."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import TYPE_CHECKING, Mapping

import numpy as np

from . import funcdsl
from .funcdsl import DomainError, Expr

if TYPE_CHECKING:
    from .conditions import ProblemSpec

# slack when converting a multiplicative window edge into a node offset
_INDEX_EPS = 1e-9


class SamplingError(DomainError):
    def __init__(self, message: str, index: int, x: float):
        self.index = index
        self.x = x
        ArithmeticError.__init__(self, f"{message} (node {index}, x={x!r})")


@dataclass(frozen=True)
class LogGrid:
    lo: float
    hi: float
    points_per_decade: int = 256

    def __post_init__(self):
        if not (self.lo > 0 and self.hi > self.lo):
            raise ValueError(f"need 0 < lo < hi, got lo={self.lo}, hi={self.hi}")
        if int(self.points_per_decade) != self.points_per_decade or self.points_per_decade < 1:
            raise ValueError("points_per_decade must be a positive integer")

    @property
    def ratio(self) -> float:
        return 10.0 ** (1.0 / self.points_per_decade)

    @property
    def n(self) -> int:
        span = math.log10(self.hi / self.lo) * self.points_per_decade
        return max(2, int(math.floor(span + 1e-9)) + 1)

    @cached_property
    def nodes(self) -> np.ndarray:
        k = np.arange(self.n, dtype=float)
        x = self.lo * 10.0 ** (k / self.points_per_decade)
        x.setflags(write=False)
        return x

    def offset(self, factor: float, side: str) -> int:
        """Node offset of the multiplicative window edge ``x*factor``.

        ``side='lo'`` rounds inward from below, ``'hi'`` inward from above.
        """
        steps = math.log10(factor) * self.points_per_decade
        if side == "lo":
            return int(math.ceil(steps - _INDEX_EPS))
        return int(math.floor(steps + _INDEX_EPS))

    def extended(self, below: int, above: int) -> "LogGrid":
        """Grid with ``below``/``above`` extra nodes sharing this grid's spacing."""
        ppd = self.points_per_decade
        lo = self.lo * 10.0 ** (-below / ppd)
        hi = lo * 10.0 ** ((self.n - 1 + below + above) / ppd)
        return LogGrid(lo, hi * (1 + 1e-12), ppd)

    def refined(self, factor: int = 2) -> "LogGrid":
        return LogGrid(self.lo, self.hi, self.points_per_decade * factor)


@dataclass(frozen=True, eq=False)
class GridFunction:
    grid: LogGrid
    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.grid.n,):
            raise ValueError(f"{self.label}: expected {self.grid.n} values, got {v.shape}")
        if not np.all(np.isfinite(v)):
            bad = int(np.flatnonzero(~np.isfinite(v))[0])
            raise ValueError(f"{self.label}: non-finite value at node {bad}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def x(self) -> np.ndarray:
        return self.grid.nodes

    def with_values(self, values, label: str | None = None) -> "GridFunction":
        return GridFunction(self.grid, values, self.label if label is None else label)

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("x,value,label\n")
            for x, v in zip(self.x, self.values):
                fh.write(f"{x:.17g},{v:.17g},{self.label}\n")


def sample(e: Expr, grid: LogGrid, params: Mapping[str, float] | None = None, label: str = "") -> GridFunction:
    x = grid.nodes
    try:
        values = funcdsl.evaluate_array(e, x, params)
    except DomainError as exc:
        index = _first_bad_node(e, x, params)
        raise SamplingError(str(exc), index, float(x[index])) from exc
    values = np.broadcast_to(values, x.shape)
    return GridFunction(grid, values, label or funcdsl.serialize(e))


def _first_bad_node(e: Expr, x: np.ndarray, params) -> int:
    f = funcdsl.compile_scalar(e, params)
    for i, xi in enumerate(x):
        try:
            f(float(xi))
        except DomainError:
            return i
    return 0


def window_extremum(
    gf: GridFunction,
    lo_ratio: float,
    hi_ratio: float,
    mode: str = "sup",
    floor_at: float | None = None,
    label: str | None = None,
) -> GridFunction:
    """Extremum of ``gf`` over nodes in ``[max(x*lo_ratio, floor_at), x*hi_ratio]``.

    On a geometric grid the window is a fixed band of node offsets, so a
    monotonic deque gives all windows in one O(n) sweep.
    """
    if not (0 < lo_ratio <= 1 <= hi_ratio):
        raise ValueError("need 0 < lo_ratio <= 1 <= hi_ratio")
    if mode not in ("sup", "inf"):
        raise ValueError("mode must be 'sup' or 'inf'")
    grid = gf.grid
    n = grid.n
    lo_off = grid.offset(lo_ratio, "lo")
    hi_off = grid.offset(hi_ratio, "hi")
    first = 0
    if floor_at is not None and floor_at > grid.nodes[0]:
        first = int(np.searchsorted(grid.nodes, floor_at * (1 - 1e-12), side="left"))
    vals = gf.values if mode == "sup" else -gf.values
    out = np.empty(n)
    dq: deque[int] = deque()
    nxt = 0
    for k in range(n):
        right = min(n - 1, k + hi_off)
        left = max(first, k + lo_off, 0)
        if left > k:
            left = k
        while nxt <= right:
            while dq and vals[dq[-1]] <= vals[nxt]:
                dq.pop()
            dq.append(nxt)
            nxt += 1
        while dq[0] < left:
            dq.popleft()
        assert dq, "empty window"
        out[k] = vals[dq[0]]
    if mode == "inf":
        out = -out
    return GridFunction(grid, out, label if label is not None else f"{mode}[{gf.label}]")


@dataclass(frozen=True, eq=False)
class DerivedFunctions:
    f: GridFunction
    mu: GridFunction
    phi: GridFunction
    g: GridFunction
    eta: GridFunction
    theta: float
    sigma: float
    m: int
    q: GridFunction = field(repr=False, default=None)
    h: GridFunction = field(repr=False, default=None)

    def check_invariants(self, rtol: float = 1e-12) -> None:
        assert np.allclose(self.mu.values, 1.0 + self.phi.values, rtol=rtol, atol=0)
        assert np.all(self.g.values <= self.eta.values)
        if self.h is not None:
            assert np.all(self.eta.values <= self.h.values)
        if self.q is not None:
            assert np.all(self.f.values <= self.q.values)


def derive_all(spec: "ProblemSpec", r_grid: LogGrid, t_grid: LogGrid) -> DerivedFunctions:
    """Build f, mu, phi on ``r_grid`` and g, eta on ``t_grid``."""
    if not math.isclose(r_grid.lo, spec.a, rel_tol=1e-12):
        raise ValueError("r_grid must start at a")
    if t_grid.hi > 1 + 1e-9:
        raise ValueError("t_grid must lie in (0, 1]")
    m, sigma, theta = spec.m, spec.sigma, spec.theta
    params = spec.params
    r = r_grid.nodes

    q = sample(spec.q, r_grid, params, label="q")
    if np.any(q.values < 0):
        bad = int(np.flatnonzero(q.values < 0)[0])
        raise SamplingError("q must be non-negative", bad, float(r[bad]))

    # b_i windows reach up to r*sigma, so sample past the end of the grid
    ext_above = r_grid.offset(sigma, "hi")
    r_ext = r_grid.extended(0, ext_above)
    denom = np.ones_like(r)
    for i, b in enumerate(spec.b, start=1):
        bi = sample(b, r_ext, params, label=f"b{i}")
        bi = bi.with_values(np.abs(bi.values))
        sup_b = window_extremum(bi, 1.0 / sigma, sigma, "sup", floor_at=spec.a).values[: r_grid.n]
        denom = denom + r ** (m - i) * sup_b
    f = GridFunction(r_grid, q.values / denom, label="f")

    sup_f = window_extremum(f, 1.0 / sigma, 1.0, "sup", floor_at=spec.a).values
    phi = GridFunction(r_grid, r**m * sup_f, label="phi")
    mu = GridFunction(r_grid, 1.0 + phi.values, label="mu")

    # h is defined on (0, inf): sample beyond both ends so windows are complete
    k_theta = t_grid.offset(theta, "hi") + 1
    t_ext = t_grid.extended(k_theta, k_theta)
    h_ext = sample(spec.h, t_ext, params, label="h")
    if np.any(h_ext.values <= 0):
        bad = int(np.flatnonzero(h_ext.values <= 0)[0])
        raise SamplingError("h must be positive", bad, float(t_ext.nodes[bad]))
    sl = slice(k_theta, k_theta + t_grid.n)
    g_ext = window_extremum(h_ext, 1.0 / theta, theta, "inf")
    eta_ext = window_extremum(h_ext, theta**-0.5, theta**0.5, "inf")
    g = GridFunction(t_grid, g_ext.values[sl], label="g")
    eta = GridFunction(t_grid, eta_ext.values[sl], label="eta")
    h = GridFunction(t_grid, h_ext.values[sl], label="h")

    derived = DerivedFunctions(f=f, mu=mu, phi=phi, g=g, eta=eta, theta=theta, sigma=sigma, m=m, q=q, h=h)
    derived.check_invariants()
    return derived
