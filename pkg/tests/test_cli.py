import json
import math
import os

import pytest

from aimcf.cli import ConfigError, format_config, main, parse_config

MINIMAL = """\
[domain]
shapes = wulff:0,0,1

[anisotropy]
norm = euclidean

[grid]
r_out = 4
h = 0.125
"""

FULL = """\
[domain]
shapes = rect:-0.5,0.5,-1,1 | wulff:0,0,0.25

[anisotropy]
norm = ell:1

[grid]
r_out = 6
h = 0.0625

[solver]
p = 1.25
max_iters = 500
tol_grad = 1e-8
tol_step = 2e-4
step_rule = backtracking:0.5,1e-4
huber_eta = 0.001

[schedule]
values = 1.5,1.25,1.125
stop_tol = 0.05
limit_mode = extrapolate

[outputs]
field_dumps = on
contour_times = 0.2,0.4
report_path = out.json
"""


# ---------------------------------------------------------------- parsing


def test_minimal_config_fills_defaults():
    cfg = parse_config(MINIMAL)
    assert cfg.r_out == 4.0
    assert cfg.h == 0.125
    assert cfg.solver.p == 1.5
    assert len(cfg.schedule.values) == 6
    assert cfg.outputs.field_dumps is False


def test_full_config_parses():
    cfg = parse_config(FULL)
    assert len(cfg.domain.shapes) == 2
    assert cfg.anisotropy.descriptor() == "ell:1"
    assert cfg.solver.p == 1.25
    assert cfg.schedule.values == (1.5, 1.25, 1.125)
    assert cfg.outputs.contour_times == (0.2, 0.4)


def test_p_range_error_names_constraint():
    bad = MINIMAL + "\n[solver]\np = 0.9\n"
    with pytest.raises(ConfigError) as ei:
        parse_config(bad)
    assert any("(1, N)" in e for e in ei.value.errors)


def test_duplicate_key_lists_both_lines():
    bad = MINIMAL + "\n[solver]\np = 1.5\np = 1.25\n"
    with pytest.raises(ConfigError) as ei:
        parse_config(bad)
    msg = "\n".join(ei.value.errors)
    assert "duplicate" in msg and "first set on line" in msg


def test_unknown_key_rejected():
    bad = MINIMAL + "\n[solver]\nqqq = 1\n"
    with pytest.raises(ConfigError) as ei:
        parse_config(bad)
    assert any("unknown key 'qqq'" in e for e in ei.value.errors)


def test_all_errors_collected():
    bad = "[domain]\nshapes = blob:1\n[anisotropy]\nnorm = zz\n[grid]\nr_out = -1\nh = 0\n"
    with pytest.raises(ConfigError) as ei:
        parse_config(bad)
    assert len(ei.value.errors) >= 3


def test_config_roundtrip_identity():
    for text in (MINIMAL, FULL):
        cfg = parse_config(text)
        printed = format_config(cfg)
        again = parse_config(printed)
        assert format_config(again) == printed


# ---------------------------------------------------------------- commands


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def small_config(tmp_path, report):
    text = f"""\
[domain]
shapes = wulff:0,0,1

[anisotropy]
norm = euclidean

[grid]
r_out = 4
h = 0.125

[solver]
p = 1.5
max_iters = 600
tol_grad = 1e-7
tol_step = 1e-4

[schedule]
values = 1.5,1.25
stop_tol = 1.0

[outputs]
field_dumps = on
report_path = {report}
"""
    return write(tmp_path, "run.cfg", text)


def test_solve_command(tmp_path, capsys):
    report = str(tmp_path / "solve.json")
    cfgfile = small_config(tmp_path, report)
    assert main(["solve", "--config", cfgfile]) == 0
    doc = json.loads(open(report).read())
    assert doc["p"] == 1.5
    assert doc["converged"] is True
    assert 0 <= doc["sandwich_gap"] < 0.1
    assert os.path.exists(str(tmp_path / "solve_lower.field"))
    assert os.path.exists(str(tmp_path / "solve_upper.field"))
    out = capsys.readouterr().out
    assert json.loads(out)["p"] == 1.5


def test_solve_p_override(tmp_path, capsys):
    report = str(tmp_path / "solve.json")
    cfgfile = small_config(tmp_path, report)
    assert main(["solve", "--config", cfgfile, "--p", "1.25"]) == 0
    assert json.loads(capsys.readouterr().out)["p"] == 1.25


def test_flow_then_levels_roundtrip(tmp_path, capsys):
    report = str(tmp_path / "flow.json")
    cfgfile = small_config(tmp_path, report)
    assert main(["flow", "--config", cfgfile]) == 0
    capsys.readouterr()
    flowfile = str(tmp_path / "flow.flow.field")
    assert os.path.exists(flowfile)
    assert main(["levels", "--flow", flowfile, "--times", "0.2,0.5"]) == 0
    lines = [l for l in capsys.readouterr().out.splitlines() if l.strip()]
    assert len(lines) == 2
    rows = [json.loads(l) for l in lines]
    assert rows[0]["t"] == 0.2
    assert rows[0]["P_F_G"] > 0
    # grid geometry survives the round trip exactly
    from aimcf.grid import read_field_file
    from aimcf.imcf import read_flow
    back = read_flow(flowfile)
    assert back.grid.nx == back.grid.ny
    assert back.grid.h == 0.125


def test_levels_missing_file_exit_2(tmp_path, capsys):
    assert main(["levels", "--flow", str(tmp_path / "nope.field"),
                 "--times", "0.1"]) == 2
    assert "ERROR CONFIG:" in capsys.readouterr().err


def test_bad_config_exit_2(tmp_path, capsys):
    cfgfile = write(tmp_path, "bad.cfg", "[solver]\np = 0.5\n")
    assert main(["solve", "--config", cfgfile]) == 2
    err = capsys.readouterr().err
    assert "ERROR CONFIG:" in err


def test_unknown_suite_exit_2(capsys):
    assert main(["verify", "--suite", "nope"]) == 2
    assert "ERROR CONFIG:" in capsys.readouterr().err


def test_solve_determinism(tmp_path, capsys):
    report = str(tmp_path / "solve.json")
    cfgfile = small_config(tmp_path, report)
    assert main(["solve", "--config", cfgfile]) == 0
    first = capsys.readouterr().out
    assert main(["solve", "--config", cfgfile]) == 0
    second = capsys.readouterr().out
    assert first == second
    assert "wall_time" not in first
