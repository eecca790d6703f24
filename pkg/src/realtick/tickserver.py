"""Tick server: meters out wall-clock time to one model session over TCP.

Protocol (UTF-8 lines, CRLF framing):

    client -> server   "<grain-ms>\\r\\n"        handshake, grain per model unit
    server -> client   "GO\\r\\n"                t0 = the instant GO is sent
    client -> server   "<mte>\\r\\n"             at most this many units may pass
                                                 ("INF" = wait for interrupt)
    server -> client   "<units>\\r\\n"           that many units have now passed
                   or  "<units>|<payload>\\r\\n" woken early by an interrupt

The reply always satisfies units <= requested mte, so a model that ticks by
the replied amount can never overshoot its own time bound.  Deadlines are
scheduled from the ideal instant of the previous advancement (t0 + sum of
units granted, in wall terms), never from request receipt, so scheduling
skew does not accumulate.  A request that arrives after its own deadline has
already passed is answered immediately and counted as an overrun.

Interrupts arrive on a second port (or via inject_interrupt); each one wakes
the pending wait and rides on the advancement as an escaped payload.  Extra
interrupts queue FIFO (bounded, drop-oldest) and are delivered one per
subsequent round.  Elapsed units on interrupt wake are truncated to a
multiple of 1/1000 of a model unit; the remainder stays in the schedule, so
nothing is lost.
"""

from __future__ import annotations

import csv
import socket
import threading
from dataclasses import dataclass, field
from fractions import Fraction
from typing import IO

from realtick.clock import Clock, WallClock
from realtick.core import INF, Infinity, TimeInf, parse_rat, rat_str

CONTROL_PORT = 4444
INTERRUPT_PORT = 4445
INTERRUPT_QUEUE_BOUND = 1024
IDLE_WARN_MS = Fraction(30_000)

_ESCAPES = [("%", "%25"), ("\r", "%0D"), ("\n", "%0A"), ("|", "%7C")]


class ProtocolError(Exception):
    pass


def escape_payload(payload: str) -> str:
    for raw, esc in _ESCAPES:
        payload = payload.replace(raw, esc)
    return payload


def unescape_payload(payload: str) -> str:
    for raw, esc in reversed(_ESCAPES):
        payload = payload.replace(esc, raw)
    return payload


def encode_advance(units: Fraction, payload: str | None = None) -> bytes:
    text = rat_str(units)
    if payload is not None:
        text = f"{text}|{escape_payload(payload)}"
    return (text + "\r\n").encode("utf-8")


def decode_advance(line: str) -> tuple[Fraction, str | None]:
    if "|" in line:
        units_text, payload = line.split("|", 1)
        return parse_rat(units_text), unescape_payload(payload)
    return parse_rat(line), None


def parse_mte_line(line: str) -> TimeInf:
    line = line.strip()
    if line == "INF":
        return INF
    units = parse_rat(line)
    if units < 0:
        raise ProtocolError(f"negative mte: {line!r}")
    return units


def _truncate_millis_unit(units: Fraction) -> Fraction:
    """Truncate toward zero to a multiple of 1/1000 model unit."""
    return Fraction(int(units * 1000), 1000)


class LineReader:
    """Blocking line reader over a socket; lines end with \\n, \\r stripped."""

    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._buf = b""

    def readline(self) -> str | None:
        while b"\n" not in self._buf:
            chunk = self._sock.recv(4096)
            if not chunk:
                return None
            self._buf += chunk
        line, self._buf = self._buf.split(b"\n", 1)
        return line.decode("utf-8").rstrip("\r")


@dataclass
class SessionStats:
    rounds: int = 0
    overruns: int = 0
    interrupts_delivered: int = 0
    interrupts_dropped: int = 0
    grain_ms: Fraction = Fraction(0)
    t0_ms: Fraction = Fraction(0)
    advance_sent_ms: list[Fraction] = field(default_factory=list)


class TickServer:
    """One control session at a time; interrupts fan in from a second port.

    With the default WallClock this is the live server; with a MockClock the
    whole protocol runs deterministically for byte-level tests.
    """

    def __init__(
        self,
        port: int = CONTROL_PORT,
        intr_port: int | None = INTERRUPT_PORT,
        clock: Clock | None = None,
        max_te: TimeInf = INF,
        idle_warn_ms: Fraction = IDLE_WARN_MS,
        log_path: str | None = None,
        host: str = "127.0.0.1",
    ):
        self.clock = clock or WallClock()
        self.host = host
        self.port = port
        self.intr_port = intr_port
        self.max_te = max_te
        self.idle_warn_ms = Fraction(idle_warn_ms)
        self.stats = SessionStats()
        self._intr_event = threading.Event()
        self._intr_queue: list[tuple[str, str]] = []
        self._intr_lock = threading.Lock()
        self._running = False
        self._closing = False
        self._active_conn: socket.socket | None = None
        self._threads: list[threading.Thread] = []
        self._control_sock: socket.socket | None = None
        self._intr_sock: socket.socket | None = None
        self._log_lock = threading.Lock()
        self._log_file: IO[str] | None = open(log_path, "w", newline="") if log_path else None
        self._log_writer = csv.writer(self._log_file) if self._log_file else None
        if self._log_writer:
            self._log_writer.writerow(["wall_ms", "event", "detail"])
        self.log_rows: list[tuple[Fraction, str, str]] = []

    # -- logging -----------------------------------------------------------

    def _log(self, event: str, detail: str = "") -> None:
        row = (self.clock.now_ms(), event, detail)
        with self._log_lock:
            self.log_rows.append(row)
            if self._log_writer and self._log_file:
                self._log_writer.writerow([rat_str(row[0]), event, detail])
                self._log_file.flush()

    # -- interrupts ----------------------------------------------------------

    def inject_interrupt(self, source: str, payload: str) -> None:
        """Queue an interrupt (bounded FIFO, drop-oldest) and wake the wait."""
        with self._intr_lock:
            self._intr_queue.append((source, payload))
            if len(self._intr_queue) > INTERRUPT_QUEUE_BOUND:
                self._intr_queue.pop(0)
                self.stats.interrupts_dropped += 1
                self._log("interrupt-dropped", "queue bound exceeded")
        self._log("interrupt", f"{source} {payload}")
        self._intr_event.set()

    def _pop_interrupt(self) -> tuple[str, str] | None:
        with self._intr_lock:
            if not self._intr_queue:
                self._intr_event.clear()
                return None
            item = self._intr_queue.pop(0)
            if not self._intr_queue:
                self._intr_event.clear()
            return item

    def _has_interrupt(self) -> bool:
        with self._intr_lock:
            return bool(self._intr_queue)

    # -- one session ---------------------------------------------------------

    def serve_connection(self, conn: socket.socket) -> None:
        """Run the protocol on an accepted (or paired) control socket."""
        reader = LineReader(conn)
        self._active_conn = conn
        try:
            line = reader.readline()
            if line is None:
                return
            try:
                grain = parse_rat(line)
                if grain <= 0:
                    raise ValueError
            except (ValueError, ZeroDivisionError):
                conn.sendall(b"ERR grain\r\n")
                self._log("error", f"bad grain {line!r}")
                return
            self._log("handshake", f"grain={rat_str(grain)}")
            # bookkeeping first: the peer may react to the bytes immediately
            base = self.clock.now_ms()  # ideal instant of the last advancement
            self.stats.grain_ms = grain
            self.stats.t0_ms = base
            self._log("go", "")
            conn.sendall(b"GO\r\n")

            while True:
                line = reader.readline()
                if line is None:
                    self._log("eof", "")
                    return
                try:
                    mte = parse_mte_line(line)
                except (ProtocolError, ValueError, ZeroDivisionError) as exc:
                    conn.sendall(b"ERR mte\r\n")
                    self._log("error", f"bad mte {line!r}: {exc}")
                    return
                self._log("request", line.strip())
                if not isinstance(mte, Infinity) and not isinstance(self.max_te, Infinity):
                    mte = min(mte, self.max_te)
                base = self._advance(conn, base, grain, mte)
        finally:
            self._active_conn = None
            try:
                conn.close()
            except OSError:
                pass

    def _send_advance(
        self, conn: socket.socket, units: Fraction, payload: str | None
    ) -> None:
        # bookkeeping first: the peer may react to the bytes immediately
        self.stats.rounds += 1
        self.stats.advance_sent_ms.append(self.clock.now_ms())
        if payload is not None:
            self.stats.interrupts_delivered += 1
        detail = rat_str(units) if payload is None else f"{rat_str(units)}|{payload}"
        self._log("advance", detail)
        conn.sendall(encode_advance(units, payload))

    def _advance(
        self, conn: socket.socket, base: Fraction, grain: Fraction, mte: TimeInf
    ) -> Fraction:
        """Wait out one round; returns the new ideal base instant."""
        # a queued interrupt is delivered on the spot, before any sleeping
        pending = self._pop_interrupt()
        if pending is not None:
            now = self.clock.now_ms()
            elapsed = _truncate_millis_unit(max(Fraction(0), (now - base) / grain))
            if not isinstance(mte, Infinity):
                elapsed = min(elapsed, mte)
            self._send_advance(conn, elapsed, pending[1])
            return base + elapsed * grain

        if isinstance(mte, Infinity):
            # nothing due: sleep until an interrupt, warning when idle
            while not self._closing:
                woke = self.clock.wait(self._intr_event, self.idle_warn_ms)
                if woke:
                    item = self._pop_interrupt()
                    if item is None:
                        continue
                    now = self.clock.now_ms()
                    elapsed = _truncate_millis_unit(
                        max(Fraction(0), (now - base) / grain)
                    )
                    self._send_advance(conn, elapsed, item[1])
                    return base + elapsed * grain
                self._log("idle", f"no time bound and no interrupt for "
                                  f"{rat_str(self.idle_warn_ms)} ms")
            return base  # shutdown while waiting; the session is torn down

        if mte == 0:
            self._send_advance(conn, Fraction(0), None)
            return base

        deadline = base + mte * grain
        now = self.clock.now_ms()
        if now > deadline:
            # the model overran its own round; grant the full request at once
            self.stats.overruns += 1
            self._log("overrun", f"late by {rat_str(now - deadline)} ms")
            self._send_advance(conn, mte, None)
            return deadline

        while True:
            now = self.clock.now_ms()
            remaining = deadline - now
            if remaining <= 0:
                self._send_advance(conn, mte, None)
                return deadline
            woke = self.clock.wait(self._intr_event, remaining)
            if self._closing:
                return base
            if woke:
                item = self._pop_interrupt()
                if item is None:
                    continue
                now = self.clock.now_ms()
                elapsed = _truncate_millis_unit(
                    max(Fraction(0), (now - base) / grain)
                )
                elapsed = min(elapsed, mte)
                self._send_advance(conn, elapsed, item[1])
                return base + elapsed * grain

    # -- listeners -----------------------------------------------------------

    def start(self) -> None:
        self._running = True
        self._control_sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._control_sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._control_sock.bind((self.host, self.port))
        self._control_sock.listen(1)
        self.port = self._control_sock.getsockname()[1]
        t = threading.Thread(target=self._control_loop, daemon=True)
        t.start()
        self._threads.append(t)
        if self.intr_port is not None:
            self._intr_sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            self._intr_sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            self._intr_sock.bind((self.host, self.intr_port))
            self._intr_sock.listen(8)
            self.intr_port = self._intr_sock.getsockname()[1]
            t2 = threading.Thread(target=self._interrupt_loop, daemon=True)
            t2.start()
            self._threads.append(t2)

    def _control_loop(self) -> None:
        assert self._control_sock is not None
        while self._running:
            try:
                conn, _ = self._control_sock.accept()
            except OSError:
                return
            try:
                self.serve_connection(conn)
            except OSError:
                # a lost peer ends its session, not the server
                self._log("error", "session aborted: connection lost")

    def _interrupt_loop(self) -> None:
        assert self._intr_sock is not None
        while self._running:
            try:
                conn, addr = self._intr_sock.accept()
            except OSError:
                return
            threading.Thread(
                target=self._interrupt_conn, args=(conn, f"{addr[0]}:{addr[1]}"),
                daemon=True,
            ).start()

    def _interrupt_conn(self, conn: socket.socket, source: str) -> None:
        reader = LineReader(conn)
        try:
            while True:
                line = reader.readline()
                if line is None:
                    return
                if line:
                    self.inject_interrupt(source, line)
        finally:
            try:
                conn.close()
            except OSError:
                pass

    def stop(self) -> None:
        self._running = False
        self._closing = True
        self._intr_event.set()  # wake a session parked on an open-ended wait
        active = self._active_conn
        if active is not None:
            try:
                active.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
        for sock in (self._control_sock, self._intr_sock):
            if sock is not None:
                try:
                    # shutdown wakes a thread blocked in accept(); close alone may not
                    sock.shutdown(socket.SHUT_RDWR)
                except OSError:
                    pass
                try:
                    sock.close()
                except OSError:
                    pass
        for t in self._threads:
            t.join(timeout=5)
        self._threads.clear()
        if self._log_file:
            self._log_file.close()
            self._log_file = None
            self._log_writer = None


def send_interrupt(host: str, port: int, payload: str) -> None:
    """One-shot interrupt sender (used by stimulus scripts and the gateway)."""
    with socket.create_connection((host, port), timeout=5.0) as sock:
        sock.sendall((payload + "\r\n").encode("utf-8"))
