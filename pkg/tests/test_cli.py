import json
import subprocess
import sys
from pathlib import Path

import pytest

from kneser import cli

E21 = """
[problem]
m = 2
a = 1
q = "r^l"
h = "t^lambda"
b1 = "B*r^s"

[params]
lambda = 0.5  # sublinear
s = 0
l = {l}
B = 1
"""

E24 = """
[problem]
q = "r^l"
h = "t^lambda"
b1 = "0"
[params]
lambda = 2
l = 1
[envelope]
C = 0.5, 1, 2
[shooting]
w0 = 12
bracket = -100, -1
"""

SQRT = """
[params]
a = 0
[shooting]
p = "1"
lambda = 0.5
w0 = 1
bracket = {bracket}
r_max = 10
"""


def _write(tmp_path, text, name="p.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_analyze_singular(tmp_path):
    out = tmp_path / "o"
    assert cli.main(["analyze", _write(tmp_path, E21.format(l=0)), "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["verdict"] == "SingularByT22"
    assert set(rep["verdicts"]) == {"t211", "t212", "t221", "t222", "t241"}
    assert (out / "curves.csv").read_text().startswith("r,f,mu,phi\n")


def test_analyze_undetermined_exit_code(tmp_path):
    text = E21.format(l=-3).replace("lambda = 0.5", "lambda = 2")
    assert cli.main(["analyze", _write(tmp_path, text), "--out", str(tmp_path / "o")]) == 2


def test_analyze_envelope_and_shot(tmp_path):
    out = tmp_path / "o"
    assert cli.main(["analyze", _write(tmp_path, E24), "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["verdict"] == "UpperEnvelopeT23"
    assert [e["C"] for e in rep["envelopes"]] == [0.5, 1, 2]
    assert rep["shooting"]["outcome"] == "Regular"
    header = (out / "curves.csv").read_text().splitlines()[0].split(",")
    assert header == ["r", "f", "mu", "phi", "upper_bound(C=0.5)", "upper_bound(C=1)", "upper_bound(C=2)", "w"]
    assert (out / "trajectory.csv").exists()


def test_analyze_is_byte_identical(tmp_path):
    cfg = _write(tmp_path, E21.format(l=-3))
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["analyze", cfg, "--out", str(a)]) == 0
    assert cli.main(["analyze", cfg, "--out", str(b)]) == 0
    for name in ("report.json", "curves.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_output_dir_from_environment(tmp_path, monkeypatch):
    target = tmp_path / "env_out"
    monkeypatch.setenv("KNESER_OUT", str(target))
    assert cli.main(["analyze", _write(tmp_path, E21.format(l=0)), "--out", str(tmp_path / "ignored")]) == 0
    assert (target / "report.json").exists()
    assert not (tmp_path / "ignored").exists()


def test_grid_overrides(tmp_path):
    out = tmp_path / "o"
    assert cli.main(["analyze", _write(tmp_path, E21.format(l=0)), "--out", str(out),
                     "--r-max", "1e5", "--ppd", "64"]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["grids"] == {"r_max": 100000, "t_min": 1e-12, "points_per_decade": 64}


@pytest.mark.parametrize("text", [
    '[problem]\nq = "r^^2"\nh = "t"\n',
    '[problem]\nq = "r^l"\nh = "t"\n',
    '[problem]\nm = two\nq = "r"\nh = "t"\n',
    "not an ini file",
])
def test_config_errors_exit_64(tmp_path, text, capsys):
    assert cli.main(["analyze", _write(tmp_path, text), "--out", str(tmp_path / "o")]) == 64
    assert "config error" in capsys.readouterr().err


def test_missing_config_and_usage(tmp_path):
    assert cli.main(["analyze", str(tmp_path / "nope.ini")]) == 64
    assert cli.main(["frobnicate"]) == 64


def test_numeric_failure_exit_70(tmp_path, capsys):
    text = '[problem]\nq = "log(r - 2)"\nh = "t"\nb1 = "0"\n'
    assert cli.main(["analyze", _write(tmp_path, text), "--out", str(tmp_path / "o")]) == 70
    assert "numeric failure" in capsys.readouterr().err


def test_shoot(tmp_path):
    out = tmp_path / "o"
    assert cli.main(["shoot", _write(tmp_path, SQRT.format(bracket="-5, 0")), "--out", str(out)]) == 0
    res = json.loads((out / "shoot.json").read_text())
    assert res["outcome"] == "Extinct"
    assert res["separatrix_slope"] == pytest.approx(-2 / 3**0.5, rel=1e-6)


def test_shoot_bracket_failure_exit_70(tmp_path):
    assert cli.main(["shoot", _write(tmp_path, SQRT.format(bracket="-5, -4")), "--out", str(tmp_path / "o")]) == 70


def test_sweep(tmp_path):
    text = "[sweep]\nfamily = E2.1\ns = 0\nl = -3, 0\n[params]\nlambda = 0.5\n"
    out = tmp_path / "o"
    assert cli.main(["sweep", _write(tmp_path, text), "--out", str(out)]) == 0
    lines = (out / "sweep.csv").read_text().splitlines()
    assert lines[0] == "s,l,verdict,expected,boundary_flag,match,error"
    assert lines[1] == "0,-3,LowerEnvelopeT24,LowerEnvelopeT24,0,1,"
    assert lines[-1].startswith("# match_rate=1 ")


def test_empty_sweep(tmp_path):
    text = "[sweep]\nfamily = E2.1\nl =\n[params]\nlambda = 0.5\ns = 0\n"
    out = tmp_path / "o"
    assert cli.main(["sweep", _write(tmp_path, text), "--out", str(out)]) == 0
    assert (out / "sweep.csv").read_text() == "l,verdict,expected,boundary_flag,match,error\n"


def test_selftest_exit_code():
    assert cli.main(["selftest"]) == 0


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "kneser", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.strip()


def test_to_json_is_canonical():
    assert cli.to_json({"a": 0.1, "b": float("nan"), "c": [1, True]}) == (
        '{\n  "a": 0.10000000000000001,\n  "b": null,\n  "c": [\n    1,\n    true\n  ]\n}')
