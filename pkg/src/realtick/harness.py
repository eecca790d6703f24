"""Scenario harness: execute, check, analyze.

`run_logical` executes a scenario entirely in process against a mock clock:
zero-time fixpoint, advance by exactly the maximal time elapse, repeat to
the horizon.  Two runs of the same scenario produce byte-identical logs.

`run_physical` launches the tick server and device emulators, drives the
same machine through the comm wrapper over live TCP, then backfills the
advancement-transit phase of each round timing from the server's own
send stamps (both sides share one monotonic clock in process).

`check_safety` re-derives the stress intervals from a log's dispatch (or
pump command) records and re-checks every budget the shaper enforced:
maximum stress duration, minimum relaxation gap, stress count per sliding
window, and the per-period rate limit.  A failed check carries a witness.

`jitter_report` summarizes round timings: 10 ms histogram, median, p95,
maximum, and deadline misses.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Mapping, Sequence

from realtick.clock import MockClock
from realtick.core import (
    Configuration,
    Infinity,
    LivelockSuspectedError,
    rat_str,
    time_min,
)
from realtick.devices import (
    PacemakerEmulator,
    PumpEmulator,
    pacemaker_server,
    pump_server,
)
from realtick.eventlog import EventLog
from realtick.scenario import Endpoint, ScenarioConfig, build_adapters, build_bundle
from realtick.shaper import ShaperParams
from realtick.tickserver import SessionStats, TickServer
from realtick.wrapper import ClientAction, RoundEngine, WrapperRun, run_wrapper


class HarnessError(Exception):
    """A run could not start or finish; `.log` holds whatever was recorded."""

    def __init__(self, message: str, log: EventLog | None = None):
        super().__init__(message)
        self.log = log if log is not None else EventLog()


# -- logical execution -------------------------------------------------------


class InProcessClients:
    """Client runner that calls device handler functions directly.

    Routes each action by client id; an unknown id behaves like an
    unreachable device (the engine logs a client failure and moves on).
    """

    def __init__(self, handlers: Mapping[str, Callable[[str], str]]):
        self.handlers = dict(handlers)

    def run(self, action: ClientAction) -> str:
        handler = self.handlers.get(action.client_id)
        if handler is None:
            raise ConnectionError(f"no in-process device for {action.client_id!r}")
        return handler(action.send) + "\n"


def _logical_devices(sc: ScenarioConfig, clock: MockClock):
    if sc.machine == "pacemaker":
        emu: PacemakerEmulator | PumpEmulator = PacemakerEmulator(clock)
        return {"pacer-client": emu.handle}, {"pacer": emu}
    emu = PumpEmulator(clock)
    return {"pump-client": emu.handle}, {"pump": emu}


@dataclass
class LogicalRun:
    final: Configuration
    elapsed: Fraction
    log: EventLog
    steps: int
    devices: dict


def run_logical(sc: ScenarioConfig, log: EventLog | None = None) -> LogicalRun:
    """Deterministic in-process run: settle, advance by exactly the mte,
    repeat until the horizon (or until nothing is ever due again).

    Wall stamps are synthetic: logical time times the grain, from zero.
    """
    log = log if log is not None else EventLog()
    bundle = build_bundle(sc)
    clock = MockClock()
    handlers, devices = _logical_devices(sc, clock)
    engine = RoundEngine(
        bundle.machine,
        build_adapters(sc),  # endpoints unused: actions run in process
        InProcessClients(handlers),
        log,
        bundle.kind_map,
        bundle.note_fields,
    )
    config = bundle.initial
    elapsed = Fraction(0)
    steps = 0
    while True:
        config, _ = engine.settle(config, elapsed, clock.now_ms)
        bound = bundle.machine.mte(config)
        if bound == 0:
            raise LivelockSuspectedError(
                "mte is 0 after a zero-time fixpoint; a due timer has no rule"
            )
        if sc.horizon is not None:
            if elapsed >= sc.horizon:
                break
            bound = time_min(bound, sc.horizon - elapsed)
        if isinstance(bound, Infinity):
            break  # nothing will ever be due again
        config = bundle.machine.tick(config, bound)
        elapsed += bound
        clock.advance(bound * sc.grain_ms)
        steps += 1
    return LogicalRun(final=config, elapsed=elapsed, log=log, steps=steps, devices=devices)


# -- physical execution --------------------------------------------------------


@dataclass
class PhysicalRun:
    wrapper: WrapperRun
    log: EventLog
    server_stats: SessionStats
    server_rows: list[tuple[Fraction, str, str]]
    devices: dict
    backfilled_rounds: int = 0

    @property
    def deadline_misses(self) -> int:
        return self.wrapper.deadline_misses

    @property
    def elapsed(self) -> Fraction:
        return self.wrapper.elapsed


def _backfill_comm1(log: EventLog, wrapper: WrapperRun, stats: SessionStats) -> int:
    """Patch advancement-transit time into each round-timing record.

    Round r (r >= 2) began when advancement r-1 arrived; the server stamped
    that advancement when it sent it.  Both stamps come from one process-wide
    monotonic clock, so their difference is the transit time.
    """
    sent = stats.advance_sent_ms
    recv = wrapper.advance_recv_ms
    patched = 0
    for rec in log.records:
        if rec.kind != "round-timing":
            continue
        r = rec.detail.get("round")
        if not isinstance(r, int) or r < 2:
            continue
        i = r - 2
        if i >= len(sent) or i >= len(recv):
            continue
        c1 = recv[i] - sent[i]
        if c1 < 0:
            continue  # clock stamps crossed a thread boundary oddly; leave as 0
        rec.detail["t_comm1_ms"] = c1
        rec.detail["t_round_ms"] = Fraction(rec.detail["t_round_ms"]) + c1
        rec.detail["jitter_ms"] = Fraction(rec.detail["jitter_ms"]) + c1
        patched += 1
    return patched


def run_physical(
    sc: ScenarioConfig,
    log: EventLog | None = None,
    launch_server: bool = True,
    launch_device: bool = True,
    server_log_path: str | None = None,
    ready: Callable[[TickServer | None, dict], None] | None = None,
) -> PhysicalRun:
    """Run against a live tick server and TCP device emulators.

    By default everything is launched in process on the scenario's ports
    (port 0 = ephemeral).  With launch_server=False the scenario's tick
    endpoint must already be listening; if it is not, the run aborts with
    a HarnessError carrying the (empty) partial log.

    `ready`, when given, is called with (tick_server, devices) after all
    components are up, just before the run begins — the hook a gateway
    uses to learn the resolved interrupt port.
    """
    log = log if log is not None else EventLog()
    bundle = build_bundle(sc)
    server: TickServer | None = None
    device_srv = None
    devices: dict = {}
    try:
        device_endpoint = sc.device
        if launch_device:
            try:
                if sc.machine == "pacemaker":
                    emu, device_srv = pacemaker_server(port=sc.device.port)
                    devices = {"pacer": emu}
                else:
                    emu, device_srv = pump_server(port=sc.device.port)
                    devices = {"pump": emu}
            except OSError as exc:
                raise HarnessError(f"device emulator failed to start: {exc}", log)
            device_endpoint = Endpoint(sc.device.host, device_srv.port)

        if launch_server:
            server = TickServer(
                port=sc.tick_port,
                intr_port=sc.intr_port,
                host=sc.tick_host,
                log_path=server_log_path,
            )
            try:
                server.start()
            except OSError as exc:
                raise HarnessError(f"tick server failed to start: {exc}", log)
            tick_host, tick_port = server.host, server.port
        else:
            tick_host, tick_port = sc.tick_host, sc.tick_port

        adapters = build_adapters(sc, device=device_endpoint)
        if ready is not None:
            ready(server, devices)
        try:
            wrap = run_wrapper(
                bundle.machine,
                bundle.initial,
                adapters,
                tick_host,
                tick_port,
                sc.grain_ms,
                horizon=sc.horizon,
                max_te=sc.max_te,
                log=log,
                kind_map=bundle.kind_map,
                note_fields=bundle.note_fields,
            )
        except OSError as exc:
            raise HarnessError(f"tick server connection failed: {exc}", log)
    finally:
        if server is not None:
            server.stop()
        if device_srv is not None:
            device_srv.stop()

    stats = server.stats if server is not None else SessionStats()
    patched = _backfill_comm1(log, wrap, stats)
    return PhysicalRun(
        wrapper=wrap,
        log=log,
        server_stats=stats,
        server_rows=list(server.log_rows) if server is not None else [],
        devices=devices,
        backfilled_rounds=patched,
    )


def run_scenario(sc: ScenarioConfig, mode: str | None = None, **kw):
    mode = mode or sc.mode
    if mode == "logical":
        return run_logical(sc, **kw)
    if mode == "physical":
        return run_physical(sc, **kw)
    raise ValueError(f"unknown mode {mode!r}")


# -- safety checking -----------------------------------------------------------


def _frac(value) -> Fraction:
    if isinstance(value, bool):
        return Fraction(int(value))
    return Fraction(value)


@dataclass(frozen=True)
class StressRun:
    """One maximal stress episode: [start, end) in logical units; end None
    while the log's last dispatch is still stressful."""

    start: Fraction
    end: Fraction | None

    def closes_by(self, instant: Fraction) -> Fraction:
        return self.end if self.end is not None else instant


@dataclass(frozen=True)
class SafetyCheck:
    name: str
    passed: bool
    witness: str | None = None


@dataclass(frozen=True)
class SafetyVerdict:
    checks: tuple[SafetyCheck, ...]
    runs: tuple[StressRun, ...]
    dispatches: int

    @property
    def all_pass(self) -> bool:
        return all(c.passed for c in self.checks)

    def failed(self) -> tuple[SafetyCheck, ...]:
        return tuple(c for c in self.checks if not c.passed)

    def summary(self) -> str:
        lines = [
            f"{'PASS' if c.passed else 'FAIL'} {c.name}"
            + (f": {c.witness}" if c.witness else "")
            for c in self.checks
        ]
        lines.append(f"({self.dispatches} dispatches, {len(self.runs)} stress runs)")
        return "\n".join(lines)


def dispatch_points(log: EventLog) -> list[tuple[Fraction, Fraction, bool]]:
    """(ltime, emitted, stressful) per dispatch record, in log order."""
    points = []
    for rec in log.records:
        if rec.kind != "dispatch":
            continue
        d = rec.detail
        points.append((rec.ltime, _frac(d["emitted"]), bool(d["stressful"])))
    return points


def _pump_cmd_points(log: EventLog) -> list[tuple[Fraction, Fraction, bool]]:
    """Fallback when a log carries only device commands: bolus enters
    stress, base leaves it."""
    points = []
    for rec in log.records:
        if rec.kind != "pump-cmd":
            continue
        mode = _frac(rec.detail.get("mode", 0))
        points.append((rec.ltime, mode, mode != 0))
    return points


def stress_runs(points: Sequence[tuple[Fraction, Fraction, bool]]) -> list[StressRun]:
    runs: list[StressRun] = []
    start: Fraction | None = None
    for ltime, _value, stressful in points:
        if stressful and start is None:
            start = ltime
        elif not stressful and start is not None:
            runs.append(StressRun(start, ltime))
            start = None
    if start is not None:
        runs.append(StressRun(start, None))
    return runs


def check_safety(log: EventLog, params: ShaperParams) -> SafetyVerdict:
    """Re-check every budget from the log alone.

    Works from dispatch records when present, otherwise from pump command
    records.  An empty log trivially passes.
    """
    points = dispatch_points(log) or _pump_cmd_points(log)
    last = points[-1][0] if points else Fraction(0)
    runs = stress_runs(points)

    checks: list[SafetyCheck] = []

    witness = None
    for run in runs:
        length = run.closes_by(last) - run.start
        if length > params.max_stress_duration:
            end = "open" if run.end is None else rat_str(run.end)
            witness = (
                f"stress run [{rat_str(run.start)}, {end}) lasted {rat_str(length)}"
                f" > {rat_str(params.max_stress_duration)}"
            )
            break
    checks.append(SafetyCheck("duration", witness is None, witness))

    witness = None
    for prev, nxt in zip(runs, runs[1:]):
        gap = nxt.start - prev.closes_by(last)
        if gap < params.min_relax_gap:
            witness = (
                f"only {rat_str(gap)} between run ending {rat_str(prev.closes_by(last))}"
                f" and run starting {rat_str(nxt.start)}"
                f" < {rat_str(params.min_relax_gap)}"
            )
            break
    checks.append(SafetyCheck("gap", witness is None, witness))

    witness = None
    for i, run in enumerate(runs):
        window_lo = run.start - params.count_window
        count = sum(
            1 for r in runs[: i + 1] if r.closes_by(run.start) >= window_lo
        )
        if count > params.max_stress_count:
            witness = (
                f"{count} stress runs intersect [{rat_str(window_lo)},"
                f" {rat_str(run.start)}] > {params.max_stress_count}"
            )
            break
    checks.append(SafetyCheck("window", witness is None, witness))

    witness = None
    for (t0, v0, _), (t1, v1, _) in zip(points, points[1:]):
        if abs(v1 - v0) > params.max_delta_per_period:
            witness = (
                f"value jumped {rat_str(v0)} -> {rat_str(v1)} between"
                f" {rat_str(t0)} and {rat_str(t1)}"
                f" (limit {rat_str(params.max_delta_per_period)} per period)"
            )
            break
    checks.append(SafetyCheck("rate-limit", witness is None, witness))

    return SafetyVerdict(tuple(checks), tuple(runs), len(points))


# -- jitter analysis -------------------------------------------------------------

JITTER_BIN_MS = 10


@dataclass(frozen=True)
class JitterReport:
    count: int
    p50_ms: Fraction
    p95_ms: Fraction
    max_ms: Fraction
    histogram: tuple[tuple[int, int], ...]  # (bin lower edge ms, count)
    deadline_misses: int
    window_misses: int | None = None  # post-hoc recount; None if grain unknown

    def summary(self) -> str:
        lines = [f"rounds analyzed: {self.count}"]
        for lo, n in self.histogram:
            bar = "#" * min(n, 60)
            lines.append(f"  [{lo:>5}, {lo + JITTER_BIN_MS:>5}) ms  {n:>6}  {bar}")
        lines.append(
            f"jitter p50 {_ms(self.p50_ms)}  p95 {_ms(self.p95_ms)}  max {_ms(self.max_ms)}"
        )
        lines.append(f"deadline misses: {self.deadline_misses}")
        if self.window_misses is not None:
            lines.append(f"window misses (with transit backfill): {self.window_misses}")
        return "\n".join(lines)


def _ms(x: Fraction) -> str:
    return f"{float(x):.3f} ms"


def nearest_rank(sorted_values: Sequence[Fraction], q: Fraction) -> Fraction:
    """Nearest-rank quantile on pre-sorted values, q in (0, 1]."""
    if not sorted_values:
        return Fraction(0)
    n = len(sorted_values)
    rank = -(-(q * n) // 1)  # ceil
    return sorted_values[int(rank) - 1]


def jitter_report(log: EventLog, grain_ms: Fraction | None = None) -> JitterReport:
    jitters: list[Fraction] = []
    window_misses: int | None = None
    if grain_ms is not None:
        window_misses = 0
    for rec in log.records:
        if rec.kind != "round-timing":
            continue
        d = rec.detail
        jitters.append(_frac(d["jitter_ms"]))
        if grain_ms is not None and d.get("requested_units") is not None:
            if _frac(d["t_round_ms"]) > _frac(d["requested_units"]) * grain_ms:
                window_misses += 1
    misses = sum(1 for rec in log.records if rec.kind == "deadline-miss")

    bins: dict[int, int] = {}
    for j in jitters:
        lo = int(j // JITTER_BIN_MS) * JITTER_BIN_MS
        bins[lo] = bins.get(lo, 0) + 1
    ordered = sorted(jitters)
    return JitterReport(
        count=len(jitters),
        p50_ms=nearest_rank(ordered, Fraction(1, 2)),
        p95_ms=nearest_rank(ordered, Fraction(95, 100)),
        max_ms=ordered[-1] if ordered else Fraction(0),
        histogram=tuple(sorted(bins.items())),
        deadline_misses=misses,
        window_misses=window_misses,
    )
