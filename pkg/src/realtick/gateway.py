"""HTTP/WebSocket gateway: a window onto a running scenario.

The gateway never touches the machine.  It tails the run's event log
read-only and sends operator commands into the run as tick-server
interrupts — the same out-of-band path any other stimulus uses.  The run
is fully functional without the gateway; this module is only imported by
the CLI when serving is requested and by its own tests.

Endpoints:
    GET  /state          derived shaper state and budget usage
    GET  /log?since=N    records with seq >= N, plus the next cursor
    WS   /events         every new record as it is appended
    POST /command        {"action": "bolus"} | {"action": "base"}
                         | {"action": "set-rate", "bpm": N}
                         400 malformed, 409 when no run is active
"""

from __future__ import annotations

import asyncio
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable

from fastapi import FastAPI, Request, WebSocket, WebSocketDisconnect
from fastapi.responses import JSONResponse

from realtick.core import rat_str
from realtick.devices import bpm_to_period_units
from realtick.eventlog import EventLog, json_value
from realtick.harness import dispatch_points, stress_runs
from realtick.scenario import ScenarioConfig
from realtick.tickserver import send_interrupt


@dataclass
class GatewaySession:
    """What the gateway is allowed to see and do."""

    scenario: ScenarioConfig
    log: EventLog
    send: Callable[[str], None]  # deliver one interrupt payload
    active: Callable[[], bool]  # is the run still accepting interrupts?


def live_session(
    sc: ScenarioConfig, log: EventLog, active: Callable[[], bool] = lambda: True
) -> GatewaySession:
    """A session that interrupts the scenario's own tick server."""

    def send(payload: str) -> None:
        send_interrupt(sc.tick_host, sc.intr_port, payload)

    return GatewaySession(scenario=sc, log=log, send=send, active=active)


def _state_view(session: GatewaySession) -> dict:
    """Shaper state and budget usage, reconstructed from the log alone."""
    sc = session.scenario
    params = sc.params
    points = dispatch_points(session.log)
    runs = stress_runs(points)
    now = points[-1][0] if points else Fraction(0)

    last_dispatch = None
    for rec in reversed(session.log.records):
        if rec.kind == "dispatch":
            last_dispatch = rec
            break
    last_request = None
    for rec in reversed(session.log.records):
        if rec.kind == "request":
            last_request = rec
            break

    open_run = runs[-1] if runs and runs[-1].end is None else None
    stress_used = (now - open_run.start) if open_run else Fraction(0)
    closed = [r for r in runs if r.end is not None]
    gap_since = (now - closed[-1].end) if closed and not open_run else None
    window_lo = now - params.count_window
    in_window = sum(1 for r in runs if r.closes_by(now) >= window_lo)

    def rd(rec, key):
        # details hold exact rationals in a live run; serve wire-safe values
        return None if rec is None else json_value(rec.detail.get(key))

    return {
        "scenario": sc.name,
        "machine": sc.machine,
        "mode": sc.mode,
        "grain_ms": rat_str(sc.grain_ms),
        "bolus_rate_ml_hr": rat_str(sc.bolus_rate_ml_hr),
        "ltime": rat_str(now),
        "records": len(session.log.records),
        "active": session.active(),
        "value": rd(last_dispatch, "emitted"),
        "requested": rd(last_request, "value"),
        "request_accepted": rd(last_request, "accepted"),
        "stressful": bool(rd(last_dispatch, "stressful")),
        "denied": bool(rd(last_dispatch, "denied")),
        "denial_reason": rd(last_dispatch, "reason"),
        "budgets": {
            "max_stress_duration": rat_str(params.max_stress_duration),
            "stress_used": rat_str(stress_used),
            "min_relax_gap": rat_str(params.min_relax_gap),
            "gap_since_last_run": None if gap_since is None else rat_str(gap_since),
            "max_stress_count": params.max_stress_count,
            "runs_in_window": in_window,
            "count_window": rat_str(params.count_window),
            "safe_value": rat_str(params.safe_value),
        },
    }


def _command_payload(sc: ScenarioConfig, body) -> str | JSONResponse:
    """Translate one operator command into an interrupt payload, or a 400."""

    def bad(reason: str) -> JSONResponse:
        return JSONResponse({"error": reason}, status_code=400)

    if not isinstance(body, dict):
        return bad("body must be a JSON object")
    action = body.get("action")
    if action == "bolus":
        return "set-mode bolus"
    if action == "base":
        return "set-mode base"
    if action == "set-rate":
        bpm = body.get("bpm")
        if isinstance(bpm, bool) or not isinstance(bpm, (int, str)):
            return bad("set-rate needs an integer or rational-string bpm")
        try:
            period = bpm_to_period_units(Fraction(bpm), sc.grain_ms)
        except (ValueError, ZeroDivisionError):
            return bad(f"not a usable bpm: {bpm!r}")
        return f"set-period {rat_str(period)}"
    return bad(f"unknown action: {action!r}")


def build_app(session: GatewaySession, ui_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="realtick gateway")

    @app.get("/state")
    def state():
        return _state_view(session)

    @app.get("/log")
    def log_since(since: int = 0):
        records = session.log.since(max(since, 0))
        return {
            "records": [r.to_json() for r in records],
            "next": records[-1].seq + 1 if records else max(since, 0),
        }

    @app.post("/command")
    async def command(request: Request):
        try:
            body = await request.json()
        except Exception:
            return JSONResponse({"error": "body must be JSON"}, status_code=400)
        payload = _command_payload(session.scenario, body)
        if isinstance(payload, JSONResponse):
            return payload
        if not session.active():
            return JSONResponse({"error": "no active run"}, status_code=409)
        try:
            await asyncio.to_thread(session.send, payload)
        except OSError as exc:
            return JSONResponse(
                {"error": f"interrupt delivery failed: {exc}"}, status_code=409
            )
        return {"sent": payload}

    @app.websocket("/events")
    async def events(ws: WebSocket):
        await ws.accept()
        queue: asyncio.Queue = asyncio.Queue(maxsize=4096)
        loop = asyncio.get_running_loop()

        def offer(item):  # runs on the loop thread
            try:
                queue.put_nowait(item)
            except asyncio.QueueFull:
                pass  # consumer hopelessly behind: drop

        def listener(rec):
            try:
                loop.call_soon_threadsafe(offer, rec.to_json())
            except RuntimeError:
                pass  # loop already closed

        session.log.subscribe(listener)
        try:
            while True:
                await ws.send_json(await queue.get())
        except (WebSocketDisconnect, RuntimeError):
            pass
        finally:
            session.log.unsubscribe(listener)

    if ui_dir is not None:
        from fastapi.staticfiles import StaticFiles

        # mounted after the API routes so they keep precedence
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
