"""Gateway: state derivation, log tailing, commands, live event stream.

Everything here drives the FastAPI app through its test client; no HTTP
server is started.  The final test wires a real physical run to prove a
posted command arrives as a tick-server interrupt.
"""

import threading
from dataclasses import replace
from fractions import Fraction
from pathlib import Path

import pytest
from fastapi.testclient import TestClient

from realtick.devices import pump_server
from realtick.eventlog import EventLog
from realtick.gateway import GatewaySession, build_app, live_session
from realtick.scenario import Endpoint, build_adapters, build_bundle, load_scenario
from realtick.tickserver import TickServer
from realtick.wrapper import run_wrapper

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


@pytest.fixture
def sc():
    return load_scenario(SCENARIOS / "pump.json")


@pytest.fixture
def fake(sc):
    """A session whose interrupts land in a list, against a canned log."""
    log = EventLog()
    sent: list[str] = []
    flags = {"active": True}
    session = GatewaySession(
        scenario=sc,
        log=log,
        send=sent.append,
        active=lambda: flags["active"],
    )
    return session, sent, flags


def seed_dispatches(log, points):
    for ltime, emitted, stressful, denied, reason in points:
        log.append(
            "dispatch",
            {
                "requested": emitted,
                "emitted": emitted,
                "stressful": stressful,
                "denied": denied,
                "reason": reason,
            },
            Fraction(ltime),
        )


# -- /state ------------------------------------------------------------------


def test_state_on_an_empty_log(fake):
    session, _, _ = fake
    res = TestClient(build_app(session)).get("/state")
    assert res.status_code == 200
    body = res.json()
    assert body["machine"] == "pump"
    assert body["records"] == 0
    assert body["bolus_rate_ml_hr"] == "60"
    assert body["value"] is None
    assert body["stressful"] is False
    assert body["budgets"]["stress_used"] == "0"
    assert body["budgets"]["max_stress_duration"] == "30"


def test_state_reflects_the_latest_dispatch_and_budgets(fake):
    session, _, _ = fake
    seed_dispatches(
        session.log,
        [(t, 1, True, False, None) for t in range(9, 20)],
    )
    session.log.append("request", {"value": 1, "accepted": True}, Fraction(9))
    body = TestClient(build_app(session)).get("/state").json()
    assert body["value"] == 1
    assert body["stressful"] is True
    assert body["requested"] == 1
    assert body["budgets"]["stress_used"] == "10"  # 9 .. 19 so far
    assert body["budgets"]["runs_in_window"] == 1
    assert body["denial_reason"] is None


def test_state_reports_denial_reason(fake):
    session, _, _ = fake
    seed_dispatches(session.log, [(5, 1, True, False, None), (6, 0, False, True, "gap")])
    body = TestClient(build_app(session)).get("/state").json()
    assert body["denied"] is True
    assert body["denial_reason"] == "gap"
    assert body["budgets"]["gap_since_last_run"] == "0"


def test_state_serializes_exact_rational_details(fake):
    # live runs store Fractions in record details; /state must still render
    session, _, _ = fake
    session.log.append("request", {"value": Fraction(1), "accepted": True}, Fraction(9))
    session.log.append(
        "dispatch",
        {
            "requested": Fraction(1),
            "emitted": Fraction(1, 3),
            "stressful": True,
            "denied": False,
            "reason": None,
        },
        Fraction(9),
    )
    res = TestClient(build_app(session)).get("/state")
    assert res.status_code == 200
    body = res.json()
    assert body["value"] == "1/3"
    assert body["requested"] == 1


# -- /log ---------------------------------------------------------------------


def test_log_tail_with_cursor(fake):
    session, _, _ = fake
    seed_dispatches(session.log, [(t, 0, False, False, None) for t in range(4)])
    client = TestClient(build_app(session))
    first = client.get("/log").json()
    assert [r["seq"] for r in first["records"]] == [0, 1, 2, 3]
    assert first["next"] == 4
    assert client.get("/log", params={"since": 4}).json() == {
        "records": [],
        "next": 4,
    }
    seed_dispatches(session.log, [(9, 1, True, False, None)])
    more = client.get("/log", params={"since": first["next"]}).json()
    assert len(more["records"]) == 1
    assert more["records"][0]["ltime"] == "9"
    assert more["next"] == 5


# -- /command ------------------------------------------------------------------


def test_command_bolus_becomes_a_mode_interrupt(fake):
    session, sent, _ = fake
    res = TestClient(build_app(session)).post("/command", json={"action": "bolus"})
    assert res.status_code == 200
    assert res.json() == {"sent": "set-mode bolus"}
    assert sent == ["set-mode bolus"]


def test_command_base_stops_the_bolus(fake):
    session, sent, _ = fake
    TestClient(build_app(session)).post("/command", json={"action": "base"})
    assert sent == ["set-mode base"]


def test_command_set_rate_converts_bpm_to_period_units(sc, fake):
    _, sent, _ = fake
    pacer = load_scenario(SCENARIOS / "pacemaker.json")  # grain 10 ms
    session = GatewaySession(pacer, EventLog(), sent.append, lambda: True)
    client = TestClient(build_app(session))
    assert client.post("/command", json={"action": "set-rate", "bpm": 80}).json() == {
        "sent": "set-period 75"
    }
    client.post("/command", json={"action": "set-rate", "bpm": 70})
    assert sent[-1] == "set-period 600/7"


@pytest.mark.parametrize(
    "body",
    [
        {},
        {"action": "explode"},
        {"action": "set-rate"},
        {"action": "set-rate", "bpm": 0},
        {"action": "set-rate", "bpm": -5},
        {"action": "set-rate", "bpm": True},
        {"action": "set-rate", "bpm": [1]},
        ["not", "an", "object"],
    ],
)
def test_malformed_commands_get_400(fake, body):
    session, sent, _ = fake
    res = TestClient(build_app(session)).post("/command", json=body)
    assert res.status_code == 400
    assert "error" in res.json()
    assert sent == []


def test_non_json_body_gets_400(fake):
    session, _, _ = fake
    res = TestClient(build_app(session)).post(
        "/command", content=b"definitely not json",
        headers={"content-type": "application/json"},
    )
    assert res.status_code == 400


def test_command_without_an_active_run_gets_409(fake):
    session, sent, flags = fake
    flags["active"] = False
    res = TestClient(build_app(session)).post("/command", json={"action": "bolus"})
    assert res.status_code == 409
    assert sent == []


def test_failed_interrupt_delivery_gets_409(sc):
    def send(_payload):
        raise ConnectionRefusedError("nobody listening")

    session = GatewaySession(sc, EventLog(), send, lambda: True)
    res = TestClient(build_app(session)).post("/command", json={"action": "bolus"})
    assert res.status_code == 409
    assert "interrupt delivery failed" in res.json()["error"]


# -- /events (websocket) ----------------------------------------------------------


def test_events_stream_delivers_appended_records(fake):
    session, _, _ = fake
    client = TestClient(build_app(session))
    with client.websocket_connect("/events") as ws:
        session.log.append("pace", {"period_units": 75}, Fraction(75))
        first = ws.receive_json()
        assert first["kind"] == "pace"
        assert first["ltime"] == "75"
        session.log.append("dispatch", {"emitted": 1}, Fraction(76))
        assert ws.receive_json()["kind"] == "dispatch"
    # the listener is gone after disconnect: appending must not blow up
    session.log.append("pace", {"period_units": 75}, Fraction(150))


# -- static console bundle ----------------------------------------------------


def test_ui_dir_serves_static_files_after_api_routes(fake, tmp_path):
    session, _, _ = fake
    (tmp_path / "index.html").write_text("<!doctype html><title>console</title>")
    (tmp_path / "app.js").write_text("export {};")
    client = TestClient(build_app(session, ui_dir=str(tmp_path)))
    res = client.get("/")
    assert res.status_code == 200
    assert "console" in res.text
    assert client.get("/app.js").status_code == 200
    # API routes keep precedence over the static mount
    assert client.get("/state").json()["machine"] == "pump"


# -- end to end: command -> interrupt -> machine ------------------------------------


def test_posted_bolus_reaches_a_live_run_as_an_interrupt(sc):
    server = TickServer(port=0, intr_port=0)
    server.start()
    emu, dev = pump_server(port=0)
    log = EventLog()
    fast = replace(
        sc,
        mode="physical",
        grain_ms=Fraction(20),
        horizon=Fraction(25),
        stimulus=(),
        tick_port=server.port,
        intr_port=server.intr_port,
        device=Endpoint(port=dev.port),
    )
    bundle = build_bundle(fast)
    done = threading.Event()
    out: dict = {}

    def drive():
        try:
            out["run"] = run_wrapper(
                bundle.machine,
                bundle.initial,
                build_adapters(fast, device=Endpoint(port=dev.port)),
                server.host,
                server.port,
                fast.grain_ms,
                horizon=fast.horizon,
                log=log,
                kind_map=bundle.kind_map,
                note_fields=bundle.note_fields,
            )
        finally:
            done.set()

    t = threading.Thread(target=drive, daemon=True)
    t.start()
    try:
        session = live_session(fast, log, active=lambda: not done.is_set())
        client = TestClient(build_app(session))
        res = client.post("/command", json={"action": "bolus"})
        assert res.status_code == 200
        assert done.wait(timeout=10), "run did not finish"
    finally:
        done.wait(timeout=10)
        server.stop()
        dev.stop()
    t.join(timeout=5)

    interrupts = [r for r in log.records if r.kind == "interrupt"]
    assert [r.detail["payload"] for r in interrupts] == ["set-mode bolus"]
    cmds = [r for r in log.records if r.kind == "pump-cmd"]
    assert cmds and cmds[0].detail["mode"] == 1
    assert [line for _, line in emu.command_log][:2] == ["RAT60", "RUN"]
    # after the run ends the gateway refuses further commands
    assert client.post("/command", json={"action": "bolus"}).status_code == 409