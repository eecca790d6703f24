"""Command-line entry points: tickserver, runmodel, harness."""

from __future__ import annotations

import argparse
import sys
import threading
import time
from fractions import Fraction
from pathlib import Path

from realtick.core import INF, TimeInf, parse_rat, rat_str
from realtick.eventlog import EventLog
from realtick.harness import (
    PhysicalRun,
    check_safety,
    jitter_report,
    run_logical,
    run_physical,
)
from realtick.scenario import ScenarioConfig, load_scenario
from realtick.tickserver import TickServer


def _rat_or_inf(text: str) -> TimeInf:
    if text.upper() == "INF":
        return INF
    return parse_rat(text)


# -- tickserver ---------------------------------------------------------------


def tickserver_main(argv=None) -> int:
    p = argparse.ArgumentParser(
        prog="tickserver",
        description="Serve logical-time advancements over TCP until interrupted.",
    )
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=4444, help="control port (0 = ephemeral)")
    p.add_argument("--intr-port", type=int, default=4445, help="interrupt port")
    p.add_argument("--no-interrupts", action="store_true", help="serve no interrupt port")
    p.add_argument("--max-te", type=_rat_or_inf, default=INF,
                   help="cap every advancement at this many units (rational or INF)")
    p.add_argument("--log", metavar="FILE", default=None, help="write a CSV event log")
    args = p.parse_args(argv)

    server = TickServer(
        port=args.port,
        intr_port=None if args.no_interrupts else args.intr_port,
        max_te=args.max_te,
        log_path=args.log,
        host=args.host,
    )
    server.start()
    intr = "off" if server.intr_port is None else str(server.intr_port)
    print(f"listening on {server.host}:{server.port} (interrupts on :{intr})", flush=True)
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
        s = server.stats
        print(
            f"served {s.rounds} advancements, {s.overruns} overruns, "
            f"{s.interrupts_delivered} interrupts delivered "
            f"({s.interrupts_dropped} dropped)",
            flush=True,
        )
    return 0


# -- runmodel ------------------------------------------------------------------


def _print_run_summary(sc: ScenarioConfig, mode: str, run, log: EventLog) -> None:
    print(f"scenario {sc.name!r} ({sc.machine}), mode {mode}, grain {rat_str(sc.grain_ms)} ms")
    print(f"elapsed {rat_str(run.elapsed)} units, {len(log.records)} records")
    if isinstance(run, PhysicalRun):
        print(
            f"rounds {run.wrapper.rounds}, deadline misses {run.deadline_misses}, "
            f"transit backfilled into {run.backfilled_rounds} rounds"
        )
    verdict = check_safety(log, sc.params)
    print(verdict.summary())
    if mode == "physical":
        print(jitter_report(log, grain_ms=sc.grain_ms).summary())


def _execute(sc: ScenarioConfig, mode: str, ready=None):
    """Run one scenario; returns (run, log).  PhysicalRun.elapsed mirrors
    the wrapper's."""
    log = EventLog()
    if mode == "logical":
        run = run_logical(sc, log=log)
        return run, log
    run = run_physical(sc, log=log, ready=ready)
    return run, log


def runmodel_main(argv=None) -> int:
    p = argparse.ArgumentParser(
        prog="runmodel",
        description="Execute one scenario and write its event log.",
    )
    p.add_argument("--scenario", required=True, metavar="FILE")
    p.add_argument("--mode", choices=["logical", "physical"], default=None,
                   help="override the scenario's mode")
    p.add_argument("--log", metavar="FILE", default=None, help="write NDJSON records here")
    p.add_argument("--horizon", type=parse_rat, default=None,
                   help="override the scenario's horizon (logical units)")
    args = p.parse_args(argv)

    sc = load_scenario(args.scenario)
    if args.horizon is not None:
        from dataclasses import replace

        sc = replace(sc, horizon=args.horizon)
    mode = args.mode or sc.mode
    run, log = _execute(sc, mode)
    if args.log:
        log.write_ndjson(args.log)
        print(f"wrote {len(log.records)} records to {args.log}")
    _print_run_summary(sc, mode, run, log)
    return 0


# -- harness --------------------------------------------------------------------


def _parse_serve_addr(text: str) -> tuple[str, int]:
    """":8080" or "0.0.0.0:8080" -> (host, port)."""
    host, _, port = text.rpartition(":")
    return (host or "127.0.0.1", int(port))


def serve_gateway(app, host: str, port: int):
    """Run a uvicorn server on a daemon thread; returns (server, thread).

    The caller stops it by setting server.should_exit and joining the thread.
    """
    import uvicorn

    config = uvicorn.Config(app, host=host, port=port, log_level="warning")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.monotonic() + 10
    while not server.started and thread.is_alive() and time.monotonic() < deadline:
        time.sleep(0.01)
    return server, thread


def _gateway_port(server) -> int:
    return server.servers[0].sockets[0].getsockname()[1]


def _harness_run(args) -> int:
    from dataclasses import replace

    sc = load_scenario(args.scenario)
    if args.horizon is not None:
        sc = replace(sc, horizon=args.horizon)
    mode = args.mode or sc.mode
    sc = replace(sc, mode=mode)  # so the gateway reports the effective mode

    gateway = None
    gateway_thread = None
    run_state = {"active": mode == "physical"}

    def start_gateway(log: EventLog, sc_now: ScenarioConfig) -> None:
        nonlocal gateway, gateway_thread
        from realtick.gateway import build_app, live_session

        session = live_session(sc_now, log, active=lambda: run_state["active"])
        ui_dir = args.ui_dir
        if ui_dir is None:
            default_ui = Path(__file__).resolve().parents[2] / "frontend" / "dist"
            ui_dir = str(default_ui) if default_ui.is_dir() else None
        host, port = _parse_serve_addr(args.serve_ui)
        gateway, gateway_thread = serve_gateway(
            build_app(session, ui_dir=ui_dir), host, port
        )
        print(f"gateway on http://{host}:{_gateway_port(gateway)}/ "
              f"(state, log, events, command)", flush=True)

    log = EventLog(path=args.log) if args.log else EventLog()
    try:
        if mode == "logical":
            run = run_logical(sc, log=log)
            if args.serve_ui:
                start_gateway(log, sc)
        else:
            def on_ready(server, devices):
                if args.serve_ui:
                    sc_live = replace(
                        sc,
                        tick_port=server.port if server else sc.tick_port,
                        intr_port=server.intr_port if server else sc.intr_port,
                    )
                    start_gateway(log, sc_live)

            run = run_physical(sc, log=log, ready=on_ready)
    finally:
        run_state["active"] = False

    _print_run_summary(sc, mode, run, log)
    if args.log:
        # rewrite so the file carries the backfilled round timings
        log.close()
        log.write_ndjson(args.log)
        print(f"log written to {args.log}")

    if gateway is not None:
        print("run finished; gateway still serving (Ctrl-C to exit)", flush=True)
        try:
            while gateway_thread.is_alive():
                time.sleep(0.2)
        except KeyboardInterrupt:
            pass
        gateway.should_exit = True
        gateway_thread.join(timeout=5)
    return 0


def _harness_check(args) -> int:
    sc = load_scenario(args.scenario)
    log = EventLog.read_ndjson(args.log)
    verdict = check_safety(log, sc.params)
    print(verdict.summary())
    return 0 if verdict.all_pass else 1


def _harness_jitter(args) -> int:
    log = EventLog.read_ndjson(args.log)
    grain = args.grain_ms
    report = jitter_report(log, grain_ms=grain)
    print(report.summary())
    return 0


def harness_main(argv=None) -> int:
    p = argparse.ArgumentParser(
        prog="harness",
        description="Run scenarios, check safety budgets from logs, analyze jitter.",
    )
    sub = p.add_subparsers(dest="cmd", required=True)

    run_p = sub.add_parser("run", help="execute a scenario")
    run_p.add_argument("--scenario", required=True, metavar="FILE")
    run_p.add_argument("--mode", choices=["logical", "physical"], default=None)
    run_p.add_argument("--horizon", type=parse_rat, default=None)
    run_p.add_argument("--log", metavar="FILE", default=None,
                       help="stream NDJSON records here as they happen")
    run_p.add_argument("--serve-ui", metavar="[HOST]:PORT", default=None,
                       help="serve the HTTP/WS gateway (and the console UI if built)")
    run_p.add_argument("--ui-dir", metavar="DIR", default=None,
                       help="static files for the console UI root")
    run_p.set_defaults(fn=_harness_run)

    check_p = sub.add_parser("check", help="re-check safety budgets from a log")
    check_p.add_argument("--log", required=True, metavar="FILE")
    check_p.add_argument("--scenario", required=True, metavar="FILE",
                         help="provides the budget parameters")
    check_p.set_defaults(fn=_harness_check)

    jit_p = sub.add_parser("jitter", help="summarize round timings from a log")
    jit_p.add_argument("--log", required=True, metavar="FILE")
    jit_p.add_argument("--grain-ms", type=parse_rat, default=None,
                       help="recount window misses at this grain")
    jit_p.set_defaults(fn=_harness_jitter)

    args = p.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(harness_main())
