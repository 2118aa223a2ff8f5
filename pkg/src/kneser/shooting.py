"""Shooting for second-order Kneser solutions and residual checks of closed forms.

The equation is ``w^(m) + z_{m-1} w^(m-1) + ... + z_1 w' = p(r) F(w)`` with
``F(w) = w^lambda`` (power) or ``F(w) = w log^lambda(1 + 1/w)`` (logpow).
Shooting is second order only; residuals work for any ``m <= 4``.

For ``m = 2`` the Kneser solution through ``w(a) = w0`` separates initial
slopes whose trajectories cross zero from those that turn upward.  The
separatrix is unstable, so one bisection only pins it down until the two
bracketing trajectories drift apart; we then restart the bisection from the
last point where they still agree.  Extinction at a finite radius is
recognised from the local power profile ``w ~ K (r_ext - r)^k``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from . import funcdsl
from .funcdsl import Binary, Const, Expr, Unary

CROSSED_ZERO = "CrossedZero"
TURNED_UP = "TurnedUp"
EXTINCT = "Extinct"
SURVIVED = "Survived"

AGREE_RTOL = 1e-6
RESTART_RTOL = 1e-8
MAX_SEGMENTS = 200
# shots run this far past r_max so that near-separatrix slopes still get classified
HORIZON = 100.0


class ShootingError(RuntimeError):
    pass


class BracketFailure(ShootingError):
    pass


@dataclass(frozen=True)
class SemilinearRHS:
    m: int
    b: tuple[Expr, ...]
    p: Expr
    lam: float
    kind: str = "power"
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("power", "logpow"):
            raise ValueError("kind must be 'power' or 'logpow'")
        if len(self.b) != self.m - 1:
            raise ValueError(f"need m-1 = {self.m - 1} lower-order coefficients")
        object.__setattr__(self, "b", tuple(self.b))
        object.__setattr__(self, "params", dict(self.params))

    @classmethod
    def from_text(cls, p: str, lam: float, b: Sequence[str] = ("0",), kind="power", params=None, m=2):
        return cls(m=m, b=tuple(funcdsl.parse(x, "r") for x in b), p=funcdsl.parse(p, "r"),
                   lam=float(lam), kind=kind, params=dict(params or {}))

    def nonlinearity(self, w: float) -> float:
        if w <= 0:
            return 0.0
        if self.kind == "power":
            return w**self.lam
        return w * math.log1p(1.0 / w) ** self.lam

    def nonlinearity_expr(self, w: Expr) -> Expr:
        lam = Const(self.lam)
        if self.kind == "power":
            return Binary("^", w, lam)
        inner = Unary("log", Binary("+", Const(1.0), Binary("/", Const(1.0), w)))
        return Binary("*", w, Binary("^", inner, lam))

    def z_expr(self, w: Expr) -> Expr:
        return Binary("*", self.p, self.nonlinearity_expr(w))

    def compiled(self):
        p = funcdsl.compile_scalar(self.p, self.params)
        b = [funcdsl.compile_scalar(bi, self.params) for bi in self.b]
        return p, b

    def second_derivative(self, r: float, w: float, dw: float) -> float:
        p, b = self.compiled()
        return p(r) * self.nonlinearity(w) - b[0](r) * dw


# ---------------------------------------------------------------- closed forms


def derive_p(w_exact: Expr, b: Sequence[Expr], lam: float, kind: str = "power", m: int = 2) -> Expr:
    """p(r) that makes ``w_exact`` an exact solution: (w^(m) + sum z_i w^(i)) / F(w)."""
    proto = SemilinearRHS(m=m, b=tuple(b), p=Const(1.0), lam=lam, kind=kind)
    lhs = funcdsl.differentiate(w_exact, m)
    for i, zi in enumerate(b, start=1):
        lhs = Binary("+", lhs, Binary("*", zi, funcdsl.differentiate(w_exact, i)))
    return Binary("/", lhs, proto.nonlinearity_expr(w_exact))


def residual(w_exact: Expr, rhs: SemilinearRHS, r_nodes, eps: float = 1e-300) -> np.ndarray:
    """Node-wise |w^(m) + sum z_i w^(i) - z(r, w)| / (|z(r, w)| + eps)."""
    r = np.asarray(getattr(r_nodes, "nodes", r_nodes), dtype=float)
    params = rhs.params
    lhs = funcdsl.evaluate_array(funcdsl.differentiate(w_exact, rhs.m), r, params)
    for i, zi in enumerate(rhs.b, start=1):
        lhs = lhs + funcdsl.evaluate_array(zi, r, params) * funcdsl.evaluate_array(
            funcdsl.differentiate(w_exact, i), r, params)
    w = np.broadcast_to(funcdsl.evaluate_array(w_exact, r, params), r.shape)
    if np.all(w == 0):
        z = np.zeros_like(r)
    else:
        z = funcdsl.evaluate_array(rhs.z_expr(w_exact), r, params)
    return np.abs(lhs - z) / (np.abs(z) + eps)


# ------------------------------------------------------------------------ IVP


@dataclass(frozen=True, eq=False)
class Shot:
    slope0: float
    event: str
    r_event: float
    r: np.ndarray
    w: np.ndarray
    dw: np.ndarray
    sol: object = field(repr=False, default=None)

    def at(self, r) -> tuple[np.ndarray, np.ndarray]:
        y = self.sol(r)
        return y[0], y[1]


def integrate_ivp(
    rhs: SemilinearRHS,
    w0: float,
    slope0: float,
    r_span: tuple[float, float],
    rtol: float = 1e-10,
    eps_w: float | None = None,
    eps_s: float | None = None,
) -> Shot:
    """Integrate the second-order problem from (w0, slope0) until the first event."""
    if rhs.m != 2:
        raise ValueError("shooting is implemented for m = 2 only")
    r0, r1 = map(float, r_span)
    eps_w = 1e-10 * w0 if eps_w is None else eps_w
    eps_s = 1e-10 * max(1.0, abs(slope0)) if eps_s is None else eps_s
    p, (b1,) = rhs.compiled()
    nonlin = rhs.nonlinearity
    ddw0 = p(r0) * nonlin(w0) - b1(r0) * slope0
    if slope0 > 0 or (slope0 == 0 and ddw0 > 0):
        arr = np.array([r0])
        return Shot(slope0, TURNED_UP, r0, arr, np.array([w0]), np.array([slope0]))

    def f(r, y):
        return (y[1], p(r) * nonlin(y[0]) - b1(r) * y[1])

    def crossed(r, y):
        return y[0]

    def turned(r, y):
        return y[1]

    def small(r, y):
        return max(y[0] - eps_w, abs(y[1]) - eps_s)

    for ev, direction in ((crossed, -1), (turned, 1), (small, -1)):
        ev.terminal = True
        ev.direction = direction

    atol = (1e-14 * w0, 1e-14 * max(1.0, abs(slope0)))
    sol = solve_ivp(f, (r0, r1), (w0, slope0), method="DOP853", rtol=rtol, atol=atol,
                    events=(crossed, turned, small), dense_output=True)
    if sol.status == -1:
        raise ShootingError(f"integration failed: {sol.message}")
    r, w, dw = sol.t, sol.y[0], sol.y[1]
    if sol.status == 0:
        event = SURVIVED
    else:
        which = [i for i, te in enumerate(sol.t_events) if len(te)]
        i = which[0]
        we, dwe = sol.y_events[i][0]
        if i == 0:
            event = CROSSED_ZERO if dwe < -eps_s else EXTINCT
        elif i == 1:
            event = TURNED_UP if we > eps_w else EXTINCT
        else:
            event = EXTINCT
    return Shot(slope0, event, float(r[-1]), r, w, dw, sol.sol)


# ------------------------------------------------------------------- shooting


@dataclass(frozen=True, eq=False)
class KneserNumericalSolution:
    r: np.ndarray
    w: np.ndarray
    dw: np.ndarray
    outcome: str  # Extinct | Regular | BracketFailure
    separatrix_slope: float
    bisection_iterations: int
    r_ext: float | None = None
    segments: int = 1
    bracket_preserved: bool = True
    diagnostic: str = ""

    def to_dict(self) -> dict:
        return {
            "outcome": self.outcome,
            "separatrix_slope": self.separatrix_slope,
            "r_ext": self.r_ext,
            "r_last": float(self.r[-1]) if len(self.r) else None,
            "bisection_iterations": self.bisection_iterations,
            "segments": self.segments,
            "diagnostic": self.diagnostic,
        }

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("r,w,dw\n")
            for a, b, c in zip(self.r, self.w, self.dw):
                fh.write(f"{a:.17g},{b:.17g},{c:.17g}\n")


@dataclass
class _Segment:
    lo: Shot
    hi: Shot
    final: Shot | None  # a midpoint shot that already settled the outcome
    iterations: int
    preserved: bool


def _bisect(rhs, r0, w0, lo, hi, r_max, rtol, scale, eps_w, eps_s) -> _Segment:
    shoot = lambda s: integrate_ivp(rhs, w0, s, (r0, r_max), rtol, eps_w, eps_s)  # noqa: E731
    shot_lo, shot_hi = shoot(lo), shoot(hi)
    for s in (shot_lo, shot_hi):
        if s.event in (SURVIVED, EXTINCT):
            return _Segment(shot_lo, shot_hi, s, 0, True)
    if shot_lo.event != CROSSED_ZERO or shot_hi.event != TURNED_UP:
        raise BracketFailure(
            f"bracket [{lo!r}, {hi!r}] gives ({shot_lo.event}, {shot_hi.event}); "
            f"need ({CROSSED_ZERO}, {TURNED_UP})"
        )
    it = 0
    preserved = True
    while hi - lo > 1e-12 * (scale + abs(lo)):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        s = shoot(mid)
        it += 1
        if s.event in (SURVIVED, EXTINCT):
            return _Segment(shot_lo, shot_hi, s, it, preserved)
        if s.event == CROSSED_ZERO:
            lo, shot_lo = mid, s
        else:
            hi, shot_hi = mid, s
        preserved = preserved and shot_lo.event == CROSSED_ZERO and shot_hi.event == TURNED_UP
    return _Segment(shot_lo, shot_hi, None, it, preserved)


def _agreement(seg: _Segment):
    """Sample both bracket trajectories on common points; index where they part."""
    r_end = min(seg.lo.r_event, seg.hi.r_event)
    r = np.unique(np.concatenate([seg.lo.r[seg.lo.r <= r_end], seg.hi.r[seg.hi.r <= r_end]]))
    w_lo, dw_lo = seg.lo.at(r)
    w_hi, dw_hi = seg.hi.at(r)
    w = 0.5 * (w_lo + w_hi)
    dw = 0.5 * (dw_lo + dw_hi)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.maximum(np.abs(w_lo - w_hi) / np.abs(w), np.abs(dw_lo - dw_hi) / np.abs(dw))
    rel = np.where(np.isfinite(rel), rel, np.inf)
    return r, w, dw, rel


def _first_exceed(rel: np.ndarray, tol: float) -> int:
    bad = np.flatnonzero(rel > tol)
    return int(bad[0]) if len(bad) else len(rel)


def find_kneser(
    rhs: SemilinearRHS,
    w0: float,
    slope_bracket: tuple[float, float],
    r_span: tuple[float, float],
    rtol: float = 1e-10,
    max_segments: int = MAX_SEGMENTS,
) -> KneserNumericalSolution:
    """Locate the Kneser solution through w(a) = w0 by bisection on the initial slope."""
    r0, r_max = map(float, r_span)
    r_end = r0 + (r_max - r0) * HORIZON
    lo, hi = sorted(map(float, slope_bracket))
    eps_w = 1e-10 * w0
    eps_s = 1e-10 * max(1.0, abs(lo), abs(hi))
    rs, ws, dws = [], [], []
    iterations = 0
    preserved = True
    separatrix = None
    r_start, w_start, scale = r0, w0, 1.0

    for segment in range(1, max_segments + 1):
        try:
            seg = _bisect(rhs, r_start, w_start, lo, hi, r_end, rtol, scale, eps_w, eps_s)
        except BracketFailure as exc:
            if segment == 1:
                return KneserNumericalSolution(
                    np.array([r0]), np.array([w0]), np.array([lo]), "BracketFailure",
                    math.nan, 0, segments=1, bracket_preserved=False, diagnostic=str(exc))
            seg = _retry_bracket(rhs, r_start, w_start, 0.5 * (lo + hi), r_end, rtol, eps_w, eps_s)
            if seg is None:
                return _finish(rs, ws, dws, "BracketFailure", separatrix, iterations, None, segment,
                               preserved, f"lost the bracket at r={r_start:.6g}: {exc}")
        iterations += seg.iterations
        preserved = preserved and seg.preserved
        if separatrix is None:
            separatrix = 0.5 * (seg.lo.slope0 + seg.hi.slope0) if seg.final is None else seg.final.slope0

        if seg.final is not None:
            s = seg.final
            if s.event == SURVIVED:
                r, w, dw = _truncate(s.r, s.w, s.dw, r_max, s.at)
                rs.append(r)
                ws.append(w)
                dws.append(dw)
                return _finish(rs, ws, dws, "Regular", separatrix, iterations, None, segment, preserved,
                               f"a shot survived to r={s.r_event:.17g}")
            rs.append(s.r)
            ws.append(s.w)
            dws.append(s.dw)
            rs.append([s.r_event])
            ws.append([0.0])
            dws.append([0.0])
            return _finish(rs, ws, dws, EXTINCT, separatrix, iterations, s.r_event, segment, preserved,
                           "extinction event")

        r, w, dw, rel = _agreement(seg)
        i_agree = max(_first_exceed(rel, AGREE_RTOL) - 1, 0)
        i_restart = max(_first_exceed(rel, RESTART_RTOL) - 1, 0)
        if i_restart == 0:
            i_restart = i_agree
        r_a, w_a, dw_a = float(r[i_agree]), float(w[i_agree]), float(dw[i_agree])
        if r_a >= r_max:
            def mean_at(x):
                (wl, dl), (wh, dh) = seg.lo.at(x), seg.hi.at(x)
                return 0.5 * (wl + wh), 0.5 * (dl + dh)
            r, w, dw = _truncate(r, w, dw, r_max, mean_at)
            rs.append(r)
            ws.append(w)
            dws.append(dw)
            return _finish(rs, ws, dws, "Regular", separatrix, iterations, None, segment, preserved,
                           f"bracketing shots agree beyond r={r_max:.17g}")

        ext = _extinction_estimate(rhs, r_a, w_a, dw_a, r0, w0)
        if ext is not None:
            keep = slice(0, i_agree + 1)
            rs += [r[keep], [ext]]
            ws += [w[keep], [0.0]]
            dws += [dw[keep], [0.0]]
            return _finish(rs, ws, dws, EXTINCT, separatrix, iterations, ext, segment, preserved,
                           f"local power profile extrapolated from r={r_a:.6g}")
        if i_restart == 0:
            return _finish(rs, ws, dws, "BracketFailure", separatrix, iterations, None, segment, preserved,
                           f"bracketing trajectories disagree immediately at r={r_start:.6g}")

        keep = slice(0, i_restart)
        rs.append(r[keep])
        ws.append(w[keep])
        dws.append(dw[keep])
        r_start, w_start = float(r[i_restart]), float(w[i_restart])
        s_mid = float(dw[i_restart])
        delta = max(1e-6 * abs(s_mid), 1e-300)
        lo, hi = s_mid - delta, s_mid + delta
        scale = abs(s_mid)
        eps_s = 1e-10 * abs(s_mid)
        eps_w = 1e-10 * w_start

    return _finish(rs, ws, dws, "BracketFailure", separatrix, iterations, None, max_segments, preserved,
                   "segment budget exhausted")


def _truncate(r, w, dw, r_max, at):
    keep = r < r_max
    w_end, dw_end = at(np.array([r_max]))
    return (np.append(r[keep], r_max), np.append(w[keep], w_end[0]), np.append(dw[keep], dw_end[0]))


def _retry_bracket(rhs, r_start, w_start, s_mid, r_max, rtol, eps_w, eps_s):
    delta = max(1e-6 * abs(s_mid), 1e-300)
    for _ in range(6):
        delta *= 10
        try:
            return _bisect(rhs, r_start, w_start, s_mid - delta, s_mid + delta, r_max, rtol,
                           abs(s_mid), eps_w, eps_s)
        except BracketFailure:
            continue
    return None


def _extinction_estimate(rhs, r, w, dw, r0, w0) -> float | None:
    """Finite extinction radius from w ~ K (r_ext - r)^k, or None if the profile is not of that type.

    For such a profile w w'' / w'^2 = (k - 1)/k < 1 while every decaying
    power or log-power profile has this ratio above one.
    """
    if not (w > 0 and dw < 0) or w > 1e-3 * w0:
        return None
    ddw = rhs.second_derivative(r, w, dw)
    rho = w * ddw / dw**2
    if not rho < 1 - 1e-3:
        return None
    k = 1.0 / (1.0 - rho)
    dist = k * w / abs(dw)
    if dist > 0.1 * (r - r0):
        return None
    return r + dist


def _finish(rs, ws, dws, outcome, separatrix, iterations, r_ext, segments, preserved, diag):
    r = np.concatenate([np.atleast_1d(np.asarray(x, float)) for x in rs]) if rs else np.array([])
    w = np.concatenate([np.atleast_1d(np.asarray(x, float)) for x in ws]) if ws else np.array([])
    dw = np.concatenate([np.atleast_1d(np.asarray(x, float)) for x in dws]) if dws else np.array([])
    if len(r):
        # drop duplicated segment joints
        keep = np.concatenate([[True], np.diff(r) > 0])
        r, w, dw = r[keep], w[keep], dw[keep]
    return KneserNumericalSolution(r, w, dw, outcome, float(separatrix) if separatrix is not None else math.nan,
                                   iterations, r_ext, segments, preserved, diag)


def verify_kneser_signs(traj, eps_w: float | None = None, eps_s: float | None = None) -> bool:
    """w >= -eps_w and w' <= eps_s at every stored point."""
    w = np.asarray(traj.w)
    dw = np.asarray(traj.dw)
    if len(w) == 0:
        return True
    eps_w = 1e-10 * abs(w[0]) if eps_w is None else eps_w
    eps_s = 1e-10 * max(1.0, abs(dw[0])) if eps_s is None else eps_s
    return bool(np.all(w >= -eps_w) and np.all(dw <= eps_s))
