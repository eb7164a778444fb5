from __future__ import annotations

import json
import subprocess
import sys

import pytest

from conftest import DATA, ROOT
from pstmon import pst
from pstmon.cli import main

S_GAME = str(DATA / "s_game.pst")
GOLDEN = ROOT / "tests" / "golden" / "guessing_session.jsonl"


def test_check_clean(capsys):
    assert main(["check", S_GAME]) == 0
    assert capsys.readouterr().out == ""


def test_check_reports_diagnostics(tmp_path, capsys):
    bad = tmp_path / "bad.pst"
    bad.write_text("&{ ?A[0.5] . end, ?A[0.6] . Y }")
    assert main(["check", str(bad)]) == 1
    out = capsys.readouterr().out
    assert "duplicate label" in out and "unbound recursion variable" in out and len(out.splitlines()) == 3


def test_check_reports_syntax_error(tmp_path, capsys):
    bad = tmp_path / "bad.pst"
    bad.write_text("&{ ?A(x:Float)[1] . end }")
    assert main(["check", str(bad)]) == 1
    assert "unknown sort" in capsys.readouterr().out


def test_dual(capsys):
    assert main(["dual", S_GAME]) == 0
    out = capsys.readouterr().out
    assert "+{" in out and "!Guess" in out and "?Hint" in out
    assert pst.parse(out) == pst.dual(pst.load((DATA / "s_game.pst").read_text()))


def test_table(capsys):
    assert main(["table", S_GAME]) == 0
    out = capsys.readouterr().out
    assert "0: external" in out and "1: internal" in out and "Quit() [0.05] -> end" in out


def test_replay_matches_golden(capsys):
    status = main(["replay", S_GAME, str(DATA / "traces" / "guessing_session.trace"), "--confidence", "0.99999"])
    assert status == 0
    assert capsys.readouterr().out == GOLDEN.read_text()


def test_replay_log_file_and_incomplete(tmp_path, capsys):
    log = tmp_path / "ev.jsonl"
    status = main(["replay", S_GAME, str(DATA / "traces" / "help_heavy.trace"), "--confidence", "0.99999",
                   "--log", str(log)])
    assert status == 1
    assert "incomplete" in capsys.readouterr().err
    assert [json.loads(x)["branch"] for x in log.read_text().splitlines()] == ["Help", "Guess"]


def test_replay_violation_exit_code(tmp_path, capsys):
    trace = tmp_path / "t.trace"
    trace.write_text("R: Jump\nR: Quit\n")
    assert main(["replay", S_GAME, str(trace), "--confidence", "0.9"]) == 3
    assert "unreachable" in capsys.readouterr().err


def test_replay_bad_trace(tmp_path):
    trace = tmp_path / "t.trace"
    trace.write_text("Q: Guess(1)\n")
    assert main(["replay", S_GAME, str(trace), "--confidence", "0.9"]) == 65


@pytest.mark.parametrize("argv", [
    [],
    ["frobnicate"],
    ["replay", S_GAME, "x.trace"],
    ["replay", S_GAME, "x.trace", "--confidence", "1.5"],
    ["replay", S_GAME, "x.trace", "--confidence", "high"],
    ["proxy", S_GAME, "--confidence", "0.9", "--listen", "127.0.0.1:0"],
])
def test_usage_errors(argv):
    assert main(argv) == 64


@pytest.mark.parametrize("argv", [
    ["check", "missing.pst"],
    ["dual", "missing.pst"],
    ["replay", S_GAME, "missing.trace", "--confidence", "0.9"],
    ["simulate", "missing.json"],
])
def test_missing_files(argv):
    assert main(argv) == 66


def test_invalid_type_is_a_data_error(tmp_path):
    bad = tmp_path / "bad.pst"
    bad.write_text("rec X . X")
    assert main(["table", str(bad)]) == 65


def test_proxy_bad_address():
    assert main(["proxy", S_GAME, "--confidence", "0.9", "--listen", "nowhere", "--forward", "127.0.0.1:1"]) == 64


def test_simulate(tmp_path, capsys):
    cfg = json.loads((DATA / "sim" / "deviant.json").read_text())
    cfg.update(type=S_GAME, runs=5)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    assert main(["simulate", str(path), "--out", str(tmp_path / "out")]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["runs"] == 5 and summary["runs_with_latency"] == 5
    assert (tmp_path / "out" / "runs.csv").exists()
    assert json.loads((tmp_path / "out" / "summary.json").read_text()) == summary


def test_simulate_bad_model(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"type": S_GAME, "confidence": 0.9, "runs": 1,
                                "right": {"distributions": {"0": {"Jump": 1.0}}}}))
    assert main(["simulate", str(path)]) == 65


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "pstmon", "check", S_GAME], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout == ""
