"""Comm wrapper: runs a timed machine against a tick server and devices.

Each round: settle the configuration (zero-time fixpoint, drain outgoing
messages through the out-adapter table, run the one-round device clients
sequentially in list order, inject the in-adapter products, repeat until the
configuration is closed), then send the maximal time elapse to the tick
server and block until it grants an advancement.  The advancement never
exceeds the request, so tick() cannot overshoot.  Interrupt payloads riding
on an advancement are decoded into messages and injected before the next
settle.

The settle phase (`RoundEngine`) is deliberately transport-agnostic: the
physical runner hands it TCP clients, the logical runner hands it in-process
device stubs, and both produce the same event records at the same logical
times.  Device clients are strictly serialized; a device that needs
concurrent conversations needs its own adapter discipline.
"""

from __future__ import annotations

import gc
import socket
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Protocol, Sequence

from realtick.clock import Clock, WallClock
from realtick.core import (
    INF,
    Configuration,
    Direction,
    Infinity,
    LivelockSuspectedError,
    Message,
    TimedMachine,
    TimeInf,
    parse_rat,
    rat_str,
    time_min,
)
from realtick.eventlog import EventLog
from realtick.tickserver import LineReader, decode_advance

CLIENT_TIMEOUT_S = 5.0


class WrapperError(Exception):
    pass


class AdapterMissingError(WrapperError):
    """An outgoing message has no out-adapter entry.  Aborts the run."""


class ClientFailure(Exception):
    """Raised internally by client runners; logged, reply becomes ''."""


@dataclass(frozen=True)
class ClientAction:
    """One one-shot exchange: connect, send a line, read one reply, close."""

    client_id: str
    host: str
    port: int
    send: str


class AdapterTable:
    """Maps outgoing message names to client actions and client replies to
    injected messages.  Message names without an out entry abort the run;
    note-only names map to an empty action list."""

    def __init__(
        self,
        out: Mapping[str, Callable[[Message], Sequence[ClientAction]]],
        in_: Mapping[str, Callable[[str], Iterable[Message]]] | None = None,
    ):
        self.out = dict(out)
        self.in_ = dict(in_ or {})

    def actions_for(self, message: Message) -> list[ClientAction]:
        try:
            build = self.out[message.name]
        except KeyError:
            raise AdapterMissingError(f"no out-adapter for message {message.name!r}")
        return list(build(message))

    def decode_reply(self, client_id: str, reply: str) -> tuple[Message, ...]:
        fn = self.in_.get(client_id)
        if fn is None:
            return ()
        return tuple(fn(reply))


class ClientRunner(Protocol):
    def run(self, action: ClientAction) -> str:
        """Return the device's one-line reply (normalized to end in \\n)."""


class TCPClientRunner:
    """The physical client: one TCP connection per action, 5 s timeout."""

    def run(self, action: ClientAction) -> str:
        with socket.create_connection(
            (action.host, action.port), timeout=CLIENT_TIMEOUT_S
        ) as conn:
            conn.settimeout(CLIENT_TIMEOUT_S)
            conn.sendall((action.send + "\r\n").encode("utf-8"))
            buf = b""
            while b"\n" not in buf:
                chunk = conn.recv(4096)
                if not chunk:
                    break  # EOF: keep whatever arrived
                buf += chunk
        text = buf.decode("utf-8", errors="replace")
        if "\n" in text:
            text = text.split("\n", 1)[0] + "\n"
        return text.replace("\r\n", "\n")


def default_payload_decoder(payload: str) -> list[Message]:
    """"name arg1 arg2" -> one internal message; numeric tokens become exact
    rationals, everything else stays a string."""
    parts = payload.split()
    if not parts:
        return []
    args: list = []
    for tok in parts[1:]:
        try:
            args.append(Fraction(tok))
        except (ValueError, ZeroDivisionError):
            args.append(tok)
    return [Message(parts[0], tuple(args), Direction.INTERNAL)]


@dataclass(frozen=True)
class RoundTiming:
    """Wall-time decomposition of one round, milliseconds.

    Phases, in order: advancement transit in, first zero-time rewrite, command
    transit out, device processing, reply transit back, post rewriting, mte
    transit out.  Phases a wrapper cannot observe directly are zero and, when
    possible, backfilled from the merged tick-server log.
    """

    t_comm1: Fraction = Fraction(0)
    t_rew1: Fraction = Fraction(0)
    t_comm2: Fraction = Fraction(0)
    t_proc: Fraction = Fraction(0)
    t_comm3: Fraction = Fraction(0)
    t_rew2: Fraction = Fraction(0)
    t_comm4: Fraction = Fraction(0)

    @property
    def t_round(self) -> Fraction:
        return (
            self.t_comm1
            + self.t_rew1
            + self.t_comm2
            + self.t_proc
            + self.t_comm3
            + self.t_rew2
            + self.t_comm4
        )

    @property
    def jitter(self) -> Fraction:
        """Delay from the should-fire instant to command delivery."""
        return self.t_comm1 + self.t_rew1 + self.t_comm2

    def exceeds_window(self, mte: TimeInf, grain_ms: Fraction) -> bool:
        if isinstance(mte, Infinity):
            return False
        return self.t_round > mte * grain_ms


def measure_round(phases: Sequence[Fraction]) -> RoundTiming:
    """Build a RoundTiming from the seven phase durations, in order."""
    if len(phases) != 7:
        raise ValueError("expected exactly 7 phase durations")
    return RoundTiming(*[Fraction(p) for p in phases])


@dataclass(frozen=True)
class SettleStats:
    client_calls: int
    rew_before_ms: Fraction  # rewriting up to the first client batch
    client_ms: Fraction  # inside device exchanges (send + process + reply)
    rew_after_ms: Fraction  # rewriting after replies were injected


class RoundEngine:
    """The zero-time half of a round, shared by logical and physical runs."""

    def __init__(
        self,
        machine: TimedMachine,
        adapters: AdapterTable,
        clients: ClientRunner,
        log: EventLog,
        kind_map: Mapping[str, str] | None = None,
        note_fields: Mapping[str, Sequence[str]] | None = None,
    ):
        self.machine = machine
        self.adapters = adapters
        self.clients = clients
        self.log = log
        self.kind_map = dict(kind_map or {})
        self.note_fields = dict(note_fields or {})

    def _detail(self, message: Message) -> dict:
        names = self.note_fields.get(message.name)
        if names is not None and len(names) == len(message.args):
            return dict(zip(names, message.args))
        return {"args": list(message.args)}

    def _log_outgoing(self, message: Message, ltime: Fraction, wall_ms) -> None:
        kind = self.kind_map.get(message.name, message.name)
        self.log.append(kind, self._detail(message), ltime, wall_ms)

    def settle(
        self,
        config: Configuration,
        ltime: Fraction,
        wall_ms: Callable[[], Fraction | None],
    ) -> tuple[Configuration, "SettleStats"]:
        """Zero-step / drain / client / inject until closed."""
        calls = 0
        stamp = wall_ms() or Fraction(0)
        rew_before = Fraction(0)
        client_ms = Fraction(0)
        rew_after = Fraction(0)
        while True:
            config = self.machine.zero_step(config)
            config, outgoing = config.drain_outgoing()
            now = wall_ms() or Fraction(0)
            if calls == 0:
                rew_before += now - stamp
            else:
                rew_after += now - stamp
            stamp = now
            if not outgoing:
                break
            received: list[Message] = []
            for message in outgoing:
                self._log_outgoing(message, ltime, wall_ms())
                for action in self.adapters.actions_for(message):
                    calls += 1
                    try:
                        reply = self.clients.run(action)
                    except Exception as exc:
                        self.log.append(
                            "client-failure",
                            {"client": action.client_id, "error": str(exc)},
                            ltime,
                            wall_ms(),
                        )
                        reply = ""
                    received.extend(self.adapters.decode_reply(action.client_id, reply))
            now = wall_ms() or Fraction(0)
            client_ms += now - stamp
            stamp = now
            if received:
                config = config.inject(received)
        if config.is_open:
            raise WrapperError(
                "incoming message left unconsumed after settle; "
                "the machine has no rule for it"
            )
        return config, SettleStats(calls, rew_before, client_ms, rew_after)


@dataclass
class WrapperRun:
    """Outcome of a physical run."""

    final: Configuration
    elapsed: Fraction
    log: EventLog
    rounds: int
    deadline_misses: int
    t0_wall_ms: Fraction
    advance_recv_ms: list[Fraction] = field(default_factory=list)
    advance_units: list[Fraction] = field(default_factory=list)


def run_wrapper(
    machine: TimedMachine,
    config: Configuration,
    adapters: AdapterTable,
    host: str,
    port: int,
    grain_ms: Fraction,
    horizon: Fraction | None = None,
    max_te: TimeInf = INF,
    log: EventLog | None = None,
    clients: ClientRunner | None = None,
    payload_decoder: Callable[[str], Iterable[Message]] = default_payload_decoder,
    kind_map: Mapping[str, str] | None = None,
    note_fields: Mapping[str, Sequence[str]] | None = None,
    clock: Clock | None = None,
    manage_gc: bool | None = None,
) -> WrapperRun:
    """Execute the machine against a live tick server until the horizon.

    While the timed loop runs, the cyclic garbage collector is held to the
    young generations (one small collection per round, inside the measured
    round time) and the whole-heap pass runs once after the loop.  Left to
    itself, the collector eventually scans everything the run has logged in
    one stop — tens of milliseconds that land inside some unlucky round's
    granted window.  `manage_gc` forces the behavior on or off; the default
    manages the collector only if it was enabled, and restores its state.
    """
    clock = clock or WallClock()
    log = log if log is not None else EventLog()
    engine = RoundEngine(
        machine, adapters, clients or TCPClientRunner(), log, kind_map, note_fields
    )
    elapsed = Fraction(0)
    rounds = 0
    misses = 0
    recv_stamps: list[Fraction] = []
    units_granted: list[Fraction] = []

    was_enabled = gc.isenabled()
    managed = was_enabled if manage_gc is None else manage_gc

    with socket.create_connection((host, port), timeout=CLIENT_TIMEOUT_S) as conn:
        reader = LineReader(conn)
        conn.sendall((rat_str(grain_ms) + "\r\n").encode("utf-8"))
        hello = reader.readline()
        if hello != "GO":
            raise WrapperError(f"handshake failed: {hello!r}")
        if managed:
            gc.disable()
            gc.collect()  # enter the timed loop with an empty collector queue
        t0 = clock.now_ms()
        conn.settimeout(None)

        try:
            while True:
                round_begin = clock.now_ms()
                if managed:
                    # young-generation sweep, bounded and inside the round time
                    gc.collect(1 if rounds % 64 == 63 else 0)
                config, stats = engine.settle(config, elapsed, lambda: clock.now_ms())

                bound = machine.mte(config)
                if bound == 0:
                    raise LivelockSuspectedError(
                        "mte is 0 after a zero-time fixpoint; a due timer has no rule"
                    )
                if horizon is not None:
                    if elapsed >= horizon:
                        break
                    bound = time_min(bound, horizon - elapsed)
                request_bound = time_min(bound, max_te)

                before_send = clock.now_ms()
                wire = "INF" if isinstance(request_bound, Infinity) else rat_str(request_bound)
                conn.sendall((wire + "\r\n").encode("utf-8"))
                sent_at = clock.now_ms()

                # residual time up to the mte send counts as post-rewriting
                timing = RoundTiming(
                    t_rew1=stats.rew_before_ms,
                    t_comm2=stats.client_ms,
                    t_rew2=before_send - round_begin - stats.rew_before_ms - stats.client_ms,
                    t_comm4=sent_at - before_send,
                )
                rounds += 1
                if timing.exceeds_window(request_bound, grain_ms):
                    misses += 1
                    log.append(
                        "deadline-miss",
                        {"t_round_ms": timing.t_round, "window_units": request_bound,
                         "round": rounds},
                        elapsed,
                        sent_at,
                    )
                log.append(
                    "round-timing",
                    {
                        "round": rounds,
                        "client_calls": stats.client_calls,
                        "t_comm1_ms": timing.t_comm1,
                        "t_rew1_ms": timing.t_rew1,
                        "t_comm2_ms": timing.t_comm2,
                        "t_proc_ms": timing.t_proc,
                        "t_comm3_ms": timing.t_comm3,
                        "t_rew2_ms": timing.t_rew2,
                        "t_comm4_ms": timing.t_comm4,
                        "t_round_ms": timing.t_round,
                        "jitter_ms": timing.jitter,
                        "requested_units": None
                        if isinstance(request_bound, Infinity)
                        else request_bound,
                    },
                    elapsed,
                    sent_at,
                )

                line = reader.readline()
                if line is None:
                    raise WrapperError("tick server closed the session")
                recv_at = clock.now_ms()
                units, payload = decode_advance(line)
                if not isinstance(request_bound, Infinity) and units > request_bound:
                    raise WrapperError(
                        f"advancement {units} exceeds requested bound {request_bound}"
                    )
                config = machine.tick(config, units)
                elapsed += units
                recv_stamps.append(recv_at)
                units_granted.append(units)
                if payload is not None:
                    log.append("interrupt", {"payload": payload}, elapsed, recv_at)
                    decoded = tuple(payload_decoder(payload))
                    if decoded:
                        config = config.inject(decoded)

        finally:
            if managed:
                if was_enabled:
                    gc.enable()
                gc.collect()

    return WrapperRun(
        final=config,
        elapsed=elapsed,
        log=log,
        rounds=rounds,
        deadline_misses=misses,
        t0_wall_ms=t0,
        advance_recv_ms=recv_stamps,
        advance_units=units_granted,
    )
