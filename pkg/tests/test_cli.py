"""Command-line entry points, driven in process (and one real subprocess)."""

import json
import re
import select
import signal
import socket
import subprocess
import sys
from fractions import Fraction
from pathlib import Path

import pytest

from realtick.cli import (
    _gateway_port,
    _parse_serve_addr,
    harness_main,
    runmodel_main,
    serve_gateway,
)
from realtick.eventlog import EventLog
from realtick.scenario import load_scenario

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


@pytest.fixture
def fast_physical(tmp_path):
    """A sub-second physical pump scenario on ephemeral ports."""
    path = tmp_path / "fast.json"
    path.write_text(
        json.dumps(
            {
                "machine": "pump",
                "grain_ms": "25",
                "horizon": 10,
                "mode": "physical",
                "tick_server": {"port": 0, "intr_port": 0},
                "device": {"port": 0},
                "stimulus": [{"due": 1, "message": "set-mode", "args": ["bolus"]}],
            }
        )
    )
    return path


# -- runmodel -----------------------------------------------------------------


def test_runmodel_logical_writes_log_and_summary(tmp_path, capsys):
    log_path = tmp_path / "pump.ndjson"
    rc = runmodel_main(
        ["--scenario", str(SCENARIOS / "pump.json"), "--log", str(log_path)]
    )
    assert rc == 0
    out = capsys.readouterr().out
    assert "mode logical" in out
    assert "PASS duration" in out
    lines = log_path.read_text().splitlines()
    assert lines and all(json.loads(line)["kind"] for line in lines)


def test_runmodel_horizon_override(capsys):
    rc = runmodel_main(
        ["--scenario", str(SCENARIOS / "pump.json"), "--horizon", "12"]
    )
    assert rc == 0
    assert "elapsed 12 units" in capsys.readouterr().out


def test_runmodel_physical_runs_and_reports_jitter(fast_physical, capsys):
    rc = runmodel_main(["--scenario", str(fast_physical)])
    assert rc == 0
    out = capsys.readouterr().out
    assert "mode physical" in out
    assert "deadline misses" in out
    assert "p95" in out


# -- harness run/check/jitter ----------------------------------------------------


def test_harness_run_then_check_round_trips(tmp_path, capsys):
    log_path = tmp_path / "run.ndjson"
    rc = harness_main(
        [
            "run",
            "--scenario", str(SCENARIOS / "pump.json"),
            "--mode", "logical",
            "--log", str(log_path),
        ]
    )
    assert rc == 0
    assert log_path.exists()
    rc = harness_main(
        ["check", "--log", str(log_path), "--scenario", str(SCENARIOS / "pump.json")]
    )
    out = capsys.readouterr().out
    assert rc == 0
    assert "PASS window" in out


def test_harness_check_fails_on_an_overlong_run(tmp_path, capsys):
    log = EventLog()
    for t in range(0, 31):
        log.append(
            "dispatch",
            {"requested": 1, "emitted": 1, "stressful": True,
             "denied": False, "reason": None},
            Fraction(t),
        )
    log.append(
        "dispatch",
        {"requested": 1, "emitted": 0, "stressful": False,
         "denied": True, "reason": "duration"},
        Fraction(31),
    )
    path = tmp_path / "bad.ndjson"
    log.write_ndjson(path)
    rc = harness_main(
        ["check", "--log", str(path), "--scenario", str(SCENARIOS / "pump.json")]
    )
    out = capsys.readouterr().out
    assert rc == 1
    assert "FAIL duration" in out
    assert "31 > 30" in out


def test_harness_jitter_prints_percentiles(tmp_path, capsys, fast_physical):
    log_path = tmp_path / "phys.ndjson"
    rc = harness_main(
        ["run", "--scenario", str(fast_physical), "--log", str(log_path)]
    )
    assert rc == 0
    rc = harness_main(["jitter", "--log", str(log_path), "--grain-ms", "25"])
    out = capsys.readouterr().out
    assert rc == 0
    assert "p95" in out
    assert "deadline misses:" in out
    assert "window misses" in out


# -- gateway serving ---------------------------------------------------------------


def test_parse_serve_addr():
    assert _parse_serve_addr(":8080") == ("127.0.0.1", 8080)
    assert _parse_serve_addr("0.0.0.0:9000") == ("0.0.0.0", 9000)


def test_serve_gateway_answers_http_and_shuts_down():
    import httpx

    from realtick.gateway import GatewaySession, build_app

    session = GatewaySession(
        scenario=load_scenario(SCENARIOS / "pump.json"),
        log=EventLog(),
        send=lambda payload: None,
        active=lambda: True,
    )
    server, thread = serve_gateway(build_app(session), "127.0.0.1", 0)
    try:
        assert server.started
        port = _gateway_port(server)
        res = httpx.get(f"http://127.0.0.1:{port}/state", timeout=5)
        assert res.status_code == 200
        assert res.json()["machine"] == "pump"
    finally:
        server.should_exit = True
        thread.join(timeout=5)
    assert not thread.is_alive()


# -- the tickserver executable --------------------------------------------------------


def test_tickserver_subprocess_serves_and_exits_cleanly():
    proc = subprocess.Popen(
        [
            sys.executable,
            "-c",
            "import sys; from realtick.cli import tickserver_main; "
            "sys.exit(tickserver_main(sys.argv[1:]))",
            "--port", "0",
            "--intr-port", "0",
        ],
        stdout=subprocess.PIPE,
        stderr=subprocess.STDOUT,
        text=True,
    )
    try:
        ready, _, _ = select.select([proc.stdout], [], [], 15)
        assert ready, "tickserver never announced itself"
        line = proc.stdout.readline()
        m = re.match(r"listening on 127\.0\.0\.1:(\d+) \(interrupts on :(\d+)\)", line)
        assert m, line
        port = int(m.group(1))

        with socket.create_connection(("127.0.0.1", port), timeout=5) as conn:
            conn.settimeout(5)
            conn.sendall(b"10\r\n")
            buf = b""
            while b"\n" not in buf:
                buf += conn.recv(64)
            assert buf == b"GO\r\n"
            conn.sendall(b"1\r\n")
            buf = b""
            while b"\n" not in buf:
                buf += conn.recv(64)
            assert buf.rstrip(b"\r\n").split(b"|")[0] == b"1"
    finally:
        proc.send_signal(signal.SIGINT)
        rc = proc.wait(timeout=10)
    rest = proc.stdout.read()
    assert rc == 0
    assert "served" in rest
