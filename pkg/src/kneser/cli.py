"""Batch front end: read a sectioned config, run the analysis, write reports.

    kneser analyze problem.ini --out results/
    kneser sweep sweep.ini
    kneser shoot problem.ini --w0 1
    kneser selftest --tol 1e-6

Exit codes: 0 success, 2 undetermined verdict, 64 usage or config error,
70 numeric failure.
"""

from __future__ import annotations

import argparse
import configparser
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__, envelope, funcdsl, quad
from .conditions import Grids, ProblemSpec, check_all, sweep
from .funcdsl import DomainError, ExprSyntaxError
from .shooting import SemilinearRHS, ShootingError, find_kneser

EXIT_OK = 0
EXIT_UNDETERMINED = 2
EXIT_CONFIG = 64
EXIT_NUMERIC = 70

NUMERIC_ERRORS = (DomainError, quad.QuadratureError, ShootingError, envelope.EnvelopeError,
                  FloatingPointError, OverflowError, ZeroDivisionError)


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- output


def fmt(v: float) -> str:
    return f"{v:.17g}"


def to_json(obj, indent: int = 0) -> str:
    """Deterministic JSON: floats at 17 significant digits, NaN and infinities as null."""
    pad = "  " * (indent + 1)
    end = "  " * indent
    if obj is None or obj is True or obj is False:
        return {None: "null", True: "true", False: "false"}[obj]
    if isinstance(obj, (int, np.integer)) and not isinstance(obj, bool):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return fmt(v) if math.isfinite(v) else "null"
    if isinstance(obj, str):
        return _json_str(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{_json_str(str(k))}: {to_json(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        if len(obj) == 0:
            return "[]"
        items = [f"{pad}{to_json(v, indent + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _json_str(s: str) -> str:
    out = ['"']
    for ch in s:
        if ch in '"\\':
            out.append("\\" + ch)
        elif ch == "\n":
            out.append("\\n")
        elif ord(ch) < 0x20:
            out.append(f"\\u{ord(ch):04x}")
        else:
            out.append(ch)
    out.append('"')
    return "".join(out)


# ---------------------------------------------------------------- config


@dataclass
class ShootConfig:
    w0: float
    bracket: tuple[float, float]
    r_max: float
    lam: float
    kind: str
    p: str
    z: list[str]


@dataclass
class RunConfig:
    spec: ProblemSpec | None
    grids: Grids
    C: list[float] = field(default_factory=lambda: [1.0])
    shooting: ShootConfig | None = None
    sweep_family: str | None = None
    sweep_grid: dict = field(default_factory=dict)
    sweep_flags: dict = field(default_factory=dict)
    raw_params: dict = field(default_factory=dict)


def _unquote(v: str) -> str:
    v = v.strip()
    if len(v) >= 2 and v[0] == v[-1] and v[0] in "\"'":
        return v[1:-1]
    return v


def _float(section: str, key: str, v: str) -> float:
    try:
        return float(_unquote(v))
    except ValueError:
        raise ConfigError(f"[{section}] {key}: expected a number, got {v!r}") from None


def _floats(section: str, key: str, v: str) -> list[float]:
    parts = [p for p in _unquote(v).replace(";", ",").split(",") if p.strip()]
    return [_float(section, key, p) for p in parts]


def _parse_expr(where: str, text: str, var: str) -> None:
    try:
        funcdsl.parse(text, var)
    except ExprSyntaxError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def load_config(path: str | os.PathLike) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    cp.optionxform = str  # parameter names are case sensitive
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc

    params = {k: _float("params", k, v) for k, v in cp["params"].items()} if cp.has_section("params") else {}

    g = cp["grids"] if cp.has_section("grids") else {}
    grids = Grids(
        r_max=_float("grids", "r_max", g.get("r_max", "1e6")),
        t_min=_float("grids", "t_min", g.get("t_min", "1e-12")),
        points_per_decade=int(_float("grids", "points_per_decade", g.get("points_per_decade", "256"))),
    )
    C = _floats("envelope", "C", cp["envelope"].get("C", "1")) if cp.has_section("envelope") else [1.0]
    if not C or any(not c > 0 for c in C):
        raise ConfigError("[envelope] C: need positive values")

    spec = None
    if cp.has_section("problem"):
        pr = cp["problem"]
        for key in ("q", "h"):
            if key not in pr:
                raise ConfigError(f"[problem] missing key {key!r}")
        m = int(_float("problem", "m", pr.get("m", "2")))
        b = [_unquote(pr.get(f"b{i}", "0")) for i in range(1, m)]
        q, h = _unquote(pr["q"]), _unquote(pr["h"])
        _parse_expr("[problem] q", q, "r")
        _parse_expr("[problem] h", h, "t")
        for i, bi in enumerate(b, start=1):
            _parse_expr(f"[problem] b{i}", bi, "r")
        try:
            spec = ProblemSpec.from_text(
                m, _float("problem", "a", pr.get("a", "1")), q, h, b, params,
                theta=_float("problem", "theta", pr.get("theta", "4")),
                sigma=_float("problem", "sigma", pr.get("sigma", "4")),
            )
        except ValueError as exc:
            raise ConfigError(f"[problem] {exc}") from exc
        missing = set().union(*(funcdsl.parameters(e) for e in (spec.q, spec.h, *spec.b))) - set(params)
        if missing:
            raise ConfigError(f"unbound parameters: {', '.join(sorted(missing))}")
        if grids.r_max / spec.a < 1e4:
            raise ConfigError("[grids] r_max must be at least 1e4 * a")

    shoot = None
    if cp.has_section("shooting"):
        sh = cp["shooting"]
        bracket = _floats("shooting", "bracket", sh.get("bracket", ""))
        if len(bracket) != 2:
            raise ConfigError("[shooting] bracket: need two slopes 'lo, hi'")
        m = spec.m if spec else 2
        z = [_unquote(sh.get(f"z{i}", "")) for i in range(1, m)]
        if spec:
            z = [zi or funcdsl.serialize(bi) for zi, bi in zip(z, spec.b)]
        else:
            z = [zi or "0" for zi in z]
        p_text = _unquote(sh.get("p", "")) or (funcdsl.serialize(spec.q) if spec else "")
        if not p_text:
            raise ConfigError("[shooting] p is required without a [problem] section")
        for key, text in [("p", p_text)] + [(f"z{i}", t) for i, t in enumerate(z, start=1)]:
            _parse_expr(f"[shooting] {key}", text, "r")
        if "lambda" not in sh and "lambda" not in params:
            raise ConfigError("[shooting] lambda is required")
        kind = _unquote(sh.get("kind", "power"))
        if kind not in ("power", "logpow"):
            raise ConfigError("[shooting] kind must be power or logpow")
        shoot = ShootConfig(
            w0=_float("shooting", "w0", sh.get("w0", "1")),
            bracket=(bracket[0], bracket[1]),
            r_max=_float("shooting", "r_max", sh.get("r_max", "100")),
            lam=_float("shooting", "lambda", sh.get("lambda", str(params.get("lambda", "")))),
            kind=kind, p=p_text, z=z,
        )

    family, grid, flags = None, {}, {}
    if cp.has_section("sweep"):
        sw = cp["sweep"]
        if "family" not in sw:
            raise ConfigError("[sweep] missing key 'family'")
        family = _unquote(sw["family"])
        for k, v in sw.items():
            if k == "family":
                continue
            if k in ("modulated", "b_zero"):
                flags[k] = _unquote(v).lower() in ("1", "true", "yes")
                continue
            grid[k] = _floats("sweep", k, v)
    return RunConfig(spec, grids, C, shoot, family, grid, flags, params)


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    g = cfg.grids
    g = Grids(
        r_max=args.r_max if getattr(args, "r_max", None) is not None else g.r_max,
        t_min=args.t_min if getattr(args, "t_min", None) is not None else g.t_min,
        points_per_decade=args.ppd if getattr(args, "ppd", None) is not None else g.points_per_decade,
    )
    cfg.grids = g
    if getattr(args, "C", None) is not None:
        cfg.C = [args.C]
    if getattr(args, "w0", None) is not None and cfg.shooting is not None:
        cfg.shooting.w0 = args.w0
    return cfg


def _out_dir(args) -> Path:
    out = Path(os.environ.get("KNESER_OUT") or args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------- commands


def _shoot(cfg: RunConfig):
    sh = cfg.shooting
    rhs = SemilinearRHS.from_text(sh.p, sh.lam, sh.z, sh.kind, cfg.raw_params, m=len(sh.z) + 1)
    a = cfg.spec.a if cfg.spec else float(cfg.raw_params.get("a", 1.0))
    return find_kneser(rhs, sh.w0, sh.bracket, (a, sh.r_max))


def run_analyze(cfg: RunConfig, out: Path) -> int:
    if cfg.spec is None:
        raise ConfigError("analyze needs a [problem] section")
    spec = cfg.spec
    rep = check_all(spec, cfg.grids)
    d = rep.derived
    r = d.f.x
    columns = {"r": r, "f": d.f.values, "mu": d.mu.values, "phi": d.phi.values}
    curves = []
    if rep.verdict in ("UpperEnvelopeT23", "LowerEnvelopeT24"):
        for C in cfg.C:
            bc = envelope.bound_curve(spec, d, rep, C)
            curves.append(bc.to_dict())
            columns[bc.samples.label] = np.where(bc.valid, bc.values, np.nan)
    shot = None
    if cfg.shooting is not None and spec.m == 2:
        sol = _shoot(cfg)
        shot = sol.to_dict()
        inside = (r >= sol.r[0]) & (r <= sol.r[-1])
        w = np.full_like(r, np.nan)
        w[inside] = np.interp(r[inside], sol.r, sol.w)
        columns["w"] = w
        sol.to_csv(out / "trajectory.csv")
    report = {
        "problem": spec.to_dict(),
        "grids": {"r_max": cfg.grids.r_max, "t_min": cfg.grids.t_min,
                  "points_per_decade": cfg.grids.points_per_decade},
        **rep.to_dict(),
        "envelopes": curves,
        "shooting": shot,
    }
    (out / "report.json").write_text(to_json(report) + "\n", encoding="utf-8")
    _write_columns(out / "curves.csv", columns)
    print(f"verdict: {rep.verdict}")
    if rep.notes:
        print(f"notes: {rep.notes}")
    return EXIT_UNDETERMINED if rep.verdict == "Undetermined" else EXIT_OK


def _write_columns(path: Path, columns: dict) -> None:
    names = list(columns)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(names) + "\n")
        for row in zip(*(columns[n] for n in names)):
            fh.write(",".join("" if not math.isfinite(v) else fmt(v) for v in row) + "\n")


def run_sweep(cfg: RunConfig, out: Path) -> int:
    if cfg.sweep_family is None:
        raise ConfigError("sweep needs a [sweep] section")
    rows = sweep(cfg.sweep_family, cfg.sweep_grid, cfg.raw_params, cfg.grids, **cfg.sweep_flags)
    keys = list(cfg.sweep_grid)
    path = out / "sweep.csv"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(keys + ["verdict", "expected", "boundary_flag", "match", "error"]) + "\n")
        for row in rows:
            vals = [fmt(row["params"][k]) for k in keys]
            vals += [row["verdict"], row["expected"], str(int(row["boundary"])), str(int(row["match"])),
                     row["error"].replace(",", ";")]
            fh.write(",".join(vals) + "\n")
        if rows:
            off = [r for r in rows if not r["boundary"]]
            rate = sum(r["match"] for r in rows) / len(rows)
            off_rate = sum(r["match"] for r in off) / len(off) if off else math.nan
            fh.write(f"# match_rate={fmt(rate)} off_boundary_match_rate={fmt(off_rate)} points={len(rows)}\n")
            print(f"match rate {rate:.1%} ({len(rows)} points); off-boundary {off_rate:.1%}")
    return EXIT_OK


def run_shoot(cfg: RunConfig, out: Path) -> int:
    if cfg.shooting is None:
        raise ConfigError("shoot needs a [shooting] section")
    sol = _shoot(cfg)
    sol.to_csv(out / "trajectory.csv")
    (out / "shoot.json").write_text(to_json(sol.to_dict()) + "\n", encoding="utf-8")
    print(f"outcome: {sol.outcome}  separatrix slope: {fmt(sol.separatrix_slope)}")
    if sol.r_ext is not None:
        print(f"extinction radius: {fmt(sol.r_ext)}")
    return EXIT_NUMERIC if sol.outcome == "BracketFailure" else EXIT_OK


def run_selftest(tol: float) -> int:
    from .oracles import run_selftest as suite

    results = suite(tol)
    for res in results:
        print(f"{'PASS' if res.passed else 'FAIL'} {res.name}: {res.detail}")
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} passed")
    return 1 if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kneser", description=__doc__.split("\n\n")[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    an = sub.add_parser("analyze", help="classify a problem and write report.json and curves.csv")
    an.add_argument("config")
    an.add_argument("--out", default="kneser_out")
    an.add_argument("--r-max", dest="r_max", type=float)
    an.add_argument("--t-min", dest="t_min", type=float)
    an.add_argument("--ppd", type=int)
    an.add_argument("--C", type=float)

    sw = sub.add_parser("sweep", help="classify every point of a family parameter grid")
    sw.add_argument("config")
    sw.add_argument("--out", default="kneser_out")

    sh = sub.add_parser("shoot", help="find the Kneser solution by bisection on the initial slope")
    sh.add_argument("config")
    sh.add_argument("--out", default="kneser_out")
    sh.add_argument("--w0", type=float)

    st = sub.add_parser("selftest", help="run the oracle suites")
    st.add_argument("--tol", type=float, default=1e-6)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    if args.command == "selftest":
        return run_selftest(args.tol)
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        out = _out_dir(args)
        if args.command == "analyze":
            return run_analyze(cfg, out)
        if args.command == "sweep":
            return run_sweep(cfg, out)
        return run_shoot(cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERIC_ERRORS as exc:
        print(f"numeric failure ({type(exc).__module__.rsplit('.', 1)[-1]}): {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
