import shutil
from pathlib import Path

import pytest

from cpusiot import data_path
from cpusiot.cli import dispatch, main

GREGOR = data_path("gregor.ttl")
SCENARIO = data_path("gregor_scenario.yaml")


def ok(*argv):
    out = dispatch(list(argv))
    assert out.exit_code == 0, out.text
    return out


def test_validate_ok():
    assert ok("validate", GREGOR).text == "OK\n"


def test_validate_reports_violations(tmp_path):
    bad = tmp_path / "bad.ttl"
    bad.write_text(Path(GREGOR).read_text().replace("psmm:basePart :LegsConnector", "psmm:basePart :Seat"))
    out = dispatch(["validate", str(bad)])
    assert out.exit_code == 1
    assert "designation.base-part" in out.text


def test_usage_error_exit_2(capsys):
    assert dispatch(["gen-pim"]).exit_code == 2
    assert main(["bogus"]) == 2
    assert "usage:" in capsys.readouterr().err


def test_full_pipeline(tmp_path):
    pim, psm, dot = tmp_path / "pim.json", tmp_path / "psm.json", tmp_path / "g.dot"
    ok("gen-pim", GREGOR, "-o", str(pim))
    ok("graph", str(pim), "--dot", str(dot))
    assert '"AT5" -> "AT6"' in dot.read_text()
    seqs = ok("sequences", str(pim), "--cap", "3").text.splitlines()
    assert seqs[0] == "BIT1 AT4 AT5 MIT AT1 AT2 AT3 AT6"
    assert seqs[-1] == "# 3 sequence(s) (capped)"
    ok("bind", str(pim), "--registry", f"scenario:{SCENARIO}", "-o", str(psm))
    metrics = tmp_path / "m.csv"
    out = ok("run", str(psm), "--scenario", SCENARIO, "--metrics", str(metrics), "--seed", "3")
    assert out.text.startswith("Completed")
    assert metrics.read_text().startswith("step_id,task_id,service,endpoint,rtt_us,outcome\n")


def test_run_with_failure(tmp_path):
    pim, psm = tmp_path / "pim.json", tmp_path / "psm.json"
    ok("gen-pim", GREGOR, "-o", str(pim))
    ok("bind", str(pim), "--registry", f"scenario:{SCENARIO}", "--mode", "eager", "-o", str(psm))
    out = ok("run", str(psm), "--scenario", SCENARIO, "--fail", "R2@AT1", "--trace", "-")
    assert "Completed" in out.text


def test_bind_empty_registry_fails(tmp_path):
    pim = tmp_path / "pim.json"
    ok("gen-pim", GREGOR, "-o", str(pim))
    out = dispatch(["bind", str(pim), "--registry", "mem:"])
    assert out.exit_code == 1
    assert "UnsatisfiedActivity" in out.text


def test_registry_from_environment(tmp_path, monkeypatch):
    pim = tmp_path / "pim.json"
    ok("gen-pim", GREGOR, "-o", str(pim))
    monkeypatch.setenv("CPUS_REGISTRY_ADDR", f"scenario:{SCENARIO}")
    assert ok("bind", str(pim)).text.startswith("{")
    monkeypatch.delenv("CPUS_REGISTRY_ADDR")
    assert dispatch(["bind", str(pim)]).exit_code == 2


def test_query_command():
    out = ok("query", f"scenario:{SCENARIO}", data_path("pickandplace_query.rq"))
    assert [line.split("\t")[0] for line in out.text.splitlines()] == ["R2/pickAndPlace", "R3/pickAndPlace"]


def test_decisions_file(tmp_path):
    dec = tmp_path / "d.yaml"
    dec.write_text("inline:\n  UpperSubAssembly: AT3\n")
    pim = tmp_path / "pim.json"
    ok("gen-pim", GREGOR, "-o", str(pim), "--decisions", str(dec))
    assert ok("sequences", str(pim)).text.splitlines()[-1] == "# 1 sequence(s)"


def test_missing_file():
    assert dispatch(["validate", "/nonexistent.ttl"]).exit_code == 1


@pytest.mark.skipif(shutil.which("cpusiot") is None, reason="console script not installed")
def test_console_script():
    import subprocess

    res = subprocess.run(["cpusiot", "validate", GREGOR], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout == "OK\n"
