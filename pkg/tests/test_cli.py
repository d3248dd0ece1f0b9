import json
import subprocess
import sys
from pathlib import Path

import pytest

import mavsession
from mavsession.cli import main
from mavsession.harness import load_trace
from mavsession.proxy import Decision
from mavsession.session import ViolationReport

SAMPLES = Path(__file__).resolve().parent.parent / "samples"
COMMON_XML = Path(mavsession.__file__).parent / "data" / "dialects" / "common.xml"
TRACES = sorted((SAMPLES / "traces").glob("*.jsonl"))


@pytest.mark.parametrize("trace", TRACES, ids=lambda p: p.stem)
def test_check_sample_corpus(trace, capsys):
    assert main(["check", str(trace), "-c", str(SAMPLES / "proxy.json")]) == 0
    clean = load_trace(trace).expected.kind == "AllForwarded"
    capsys.readouterr()
    assert main(["-q", "check", str(trace), "--expect", "clean"]) == (0 if clean else 1)


def test_check_json_round_trips(tmp_path, capsys):
    decisions = tmp_path / "d.jsonl"
    assert main(["check", str(SAMPLES / "traces" / "stale_buffer_2_1.jsonl"), "--json",
                 "--decisions", str(decisions)]) == 0
    data = json.loads(capsys.readouterr().out)
    assert data["ok"] and data["outcome"] == data["expected"]
    parsed = [Decision.from_json(d) for d in data["decisions"]]
    assert [json.dumps(d.to_json(), sort_keys=True) for d in parsed] == decisions.read_text().splitlines()
    (report,) = [r for d in parsed for r in d.reports]
    assert ViolationReport.from_json(report.to_json()) == report
    assert report.reason.value == "RefinementFalse"


def test_check_warn_mode_and_no_retransmission(capsys):
    trace = str(SAMPLES / "traces" / "stale_buffer_2_1.jsonl")
    assert main(["--json", "check", trace, "--mode", "warn", "--no-retransmission"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert all(d["verdict"] == "forward" for d in data["decisions"])


def test_scenarios_generate_and_list(tmp_path, capsys):
    out = tmp_path / "t.jsonl"
    assert main(["scenarios", "stale_buffer", "-p", "N=3", "-p", "k=0", "--seed", "4", "-o", str(out)]) == 0
    assert "DropAt" in capsys.readouterr().out
    assert main(["check", str(out)]) == 0
    capsys.readouterr()
    assert main(["scenarios", "--list", "--json"]) == 0
    assert "good_mission" in json.loads(capsys.readouterr().out)
    assert main(["scenarios", "good_mission", "-p", "N=1"]) == 0
    assert capsys.readouterr().out.startswith('{"expected"')


def test_dialect_compile(tmp_path, capsys):
    out = tmp_path / "common.json"
    assert main(["--json", "dialect", "compile", str(COMMON_XML), "-o", str(out)]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["messages"] > 200 and info["enums"] > 100
    assert json.loads(out.read_text())["messages"]


def test_bench_command(tmp_path, capsys):
    out = tmp_path / "bench.json"
    assert main(["bench", "-p", "N=5", "--reps", "30", "-o", str(out)]) == 0
    assert "±" in capsys.readouterr().out
    assert json.loads(out.read_text())["repetitions"] == 30


@pytest.mark.parametrize("argv", [
    [],
    ["frobnicate"],
    ["check"],
    ["check", "/nonexistent/trace.jsonl"],
    ["check", str(SAMPLES / "traces" / "good_mission_3.jsonl"), "-c", "/nonexistent.json"],
    ["check", str(SAMPLES / "traces" / "good_mission_3.jsonl"), "--mode", "loud"],
    ["scenarios", "good_mission", "-p", "N"],
    ["scenarios", "stale_buffer", "-p", "N=1", "-p", "k=1"],
    ["scenarios", "warp_drive"],
    ["dialect", "compile", "/nonexistent.xml"],
    ["bench", "--reps", "3"],
])
def test_usage_errors_exit_2(argv, capsys):
    assert main(argv) == 2


def test_bad_config_exits_2(tmp_path, monkeypatch):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"protocols": []}))
    monkeypatch.setenv("MAVSESSION_CONFIG", str(cfg))
    assert main(["check", str(SAMPLES / "traces" / "good_mission_3.jsonl")]) == 2


def test_malformed_trace_exits_2(tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{not json\n")
    assert main(["check", str(bad)]) == 2


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "mavsession", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "mavsession" in res.stdout
    res = subprocess.run([sys.executable, "-m", "mavsession", "frobnicate"], capture_output=True, text=True)
    assert res.returncode == 2
