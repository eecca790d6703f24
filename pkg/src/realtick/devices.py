"""Device-side emulators and environment models.

The wrapper's device clients are one-shot: connect, send one line, read one
line, close.  Everything here speaks that dialect.  The pacemaker sink
records pace instants; the syringe-pump emulator executes the stop /
set-rate / start command set with exact rational volume integration; the
stimulus source is a machine element that releases scheduled messages; the
heart stimulus pushes pacing-rate requests at the tick server's interrupt
port.
"""

from __future__ import annotations

import csv
import socket
import threading
import time
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Sequence

from realtick.clock import Clock, WallClock
from realtick.core import INF, Message, ModelObject, ObjectRule, TimeInf, rat_str
from realtick.tickserver import send_interrupt

PACEMAKER_PORT = 4451
PUMP_PORT = 1234

# one US fluid ounce, exactly, in millilitres
_ML_PER_OZ = Fraction(295735295625, 10**10)


def tenth_oz(volume_ml: Fraction) -> Fraction:
    """Quantize a volume to the nearest 0.1 oz (a scale's display precision)."""
    tenths = round(Fraction(volume_ml) / (_ML_PER_OZ / 10))
    return Fraction(tenths, 10)


# --------------------------------------------------------------------------
# pacemaker: a trace-recording pace sink
# --------------------------------------------------------------------------


@dataclass
class PaceTrace:
    """Wall-clock instants (ms) at which a pace command arrived."""

    instants: list[Fraction] = field(default_factory=list)

    @property
    def intervals(self) -> list[Fraction]:
        return [b - a for a, b in zip(self.instants, self.instants[1:])]

    def validate(self) -> None:
        for a, b in zip(self.instants, self.instants[1:]):
            if not b > a:
                raise ValueError(f"pace instants not strictly increasing: {a} !< {b}")

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["wall_ms"])
            for t in self.instants:
                w.writerow([rat_str(t)])


class PacemakerEmulator:
    """Replies "shocked" to each pace command and records when it arrived."""

    def __init__(self, clock: Clock | None = None):
        self.clock = clock or WallClock()
        self.trace = PaceTrace()
        self.rejected: list[tuple[Fraction, str]] = []
        self._lock = threading.Lock()

    def handle(self, line: str) -> str:
        now = self.clock.now_ms()
        with self._lock:
            if line == "shock" or line.startswith("SetLeadVoltage"):
                self.trace.instants.append(now)
                return "shocked"
            self.rejected.append((now, line))
            return "ERR"

    def write_csv(self, path: str | Path) -> None:
        with self._lock:
            self.trace.write_csv(path)


# --------------------------------------------------------------------------
# syringe pump: stop / set-rate / start with lazy exact volume integration
# --------------------------------------------------------------------------

_MS_PER_HOUR = Fraction(3_600_000)


class PumpEmulator:
    """Infusion-pump command core.

    Commands: "STP" stops, "RAT<n>" / "RAT <n>" sets the rate to n ml/hr
    (n a positive decimal), "RUN" starts.  Each valid command answers "OK";
    a malformed rate answers "ERR" and leaves the state untouched.  Volume
    is the exact integral of rate over running time, settled lazily from
    the injectable clock on every read or state change.
    """

    def __init__(self, clock: Clock | None = None):
        self.clock = clock or WallClock()
        self.rate = Fraction(0)  # ml/hr
        self.running = False
        self._volume = Fraction(0)  # ml, settled up to _mark
        self._mark = self.clock.now_ms()
        self.command_log: list[tuple[Fraction, str]] = []
        self.samples: list[tuple[Fraction, Fraction, Fraction, bool]] = []
        self._lock = threading.Lock()

    def _settle(self) -> Fraction:
        """Integrate volume up to now; returns now."""
        now = self.clock.now_ms()
        if self.running:
            self._volume += self.rate * (now - self._mark) / _MS_PER_HOUR
        self._mark = now
        return now

    @property
    def volume_ml(self) -> Fraction:
        with self._lock:
            self._settle()
            return self._volume

    def snapshot(self) -> tuple[Fraction, Fraction, Fraction, bool]:
        """(wall_ms, volume_ml, rate, running), volume settled to now."""
        with self._lock:
            now = self._settle()
            return (now, self._volume, self.rate, self.running)

    def sample(self) -> None:
        self.samples.append(self.snapshot())

    def handle(self, line: str) -> str:
        with self._lock:
            now = self._settle()
            self.command_log.append((now, line))
            reply = self._apply(line)
            self.samples.append((now, self._volume, self.rate, self.running))
            return reply

    def _apply(self, line: str) -> str:
        if line == "STP":
            self.running = False
            return "OK"
        if line == "RUN":
            self.running = True
            return "OK"
        if line.startswith("RAT"):
            arg = line[3:].strip()
            try:
                rate = Fraction(arg)
            except (ValueError, ZeroDivisionError):
                return "ERR"
            if rate <= 0:
                return "ERR"
            self.rate = rate
            return "OK"
        return "ERR"

    def write_csv(self, path: str | Path) -> None:
        with self._lock:
            rows = list(self.samples)
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["wall_ms", "volume_ml", "rate", "running"])
            for wall, vol, rate, running in rows:
                w.writerow([rat_str(wall), rat_str(vol), rat_str(rate), int(running)])


# --------------------------------------------------------------------------
# one-shot line server: the TCP face shared by both emulators
# --------------------------------------------------------------------------


class LineDeviceServer:
    """Serves one-round clients: read one line, answer one line, close.

    Connections are handled strictly sequentially; the handler owns its own
    locking for state read concurrently elsewhere (e.g. by the gateway).
    """

    def __init__(self, handler: Callable[[str], str], port: int = 0, host: str = "127.0.0.1"):
        self.handler = handler
        self.host = host
        self.port = port
        self._sock: socket.socket | None = None
        self._thread: threading.Thread | None = None
        self._running = False

    def start(self) -> None:
        self._running = True
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((self.host, self.port))
        self._sock.listen(8)
        self.port = self._sock.getsockname()[1]
        self._thread = threading.Thread(target=self._serve, daemon=True)
        self._thread.start()

    def _serve(self) -> None:
        assert self._sock is not None
        while self._running:
            try:
                conn, _ = self._sock.accept()
            except OSError:
                return  # listener closed
            with conn:
                try:
                    conn.settimeout(5.0)
                    buf = b""
                    while b"\n" not in buf:
                        chunk = conn.recv(4096)
                        if not chunk:
                            break
                        buf += chunk
                    if b"\n" not in buf:
                        continue
                    line = buf.split(b"\n", 1)[0].rstrip(b"\r").decode("utf-8")
                    reply = self.handler(line)
                    conn.sendall((reply + "\n").encode("utf-8"))
                except OSError:
                    continue

    def stop(self) -> None:
        self._running = False
        if self._sock is not None:
            try:
                # shutdown wakes a thread blocked in accept(); close alone may not
                self._sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            try:
                self._sock.close()
            except OSError:
                pass
        if self._thread is not None:
            self._thread.join(timeout=5)


def pacemaker_server(
    port: int = PACEMAKER_PORT, clock: Clock | None = None
) -> tuple[PacemakerEmulator, LineDeviceServer]:
    """A started pacemaker sink listening on `port` (0 = ephemeral)."""
    emu = PacemakerEmulator(clock)
    srv = LineDeviceServer(emu.handle, port=port)
    srv.start()
    return emu, srv


def pump_server(
    port: int = PUMP_PORT, clock: Clock | None = None
) -> tuple[PumpEmulator, LineDeviceServer]:
    """A started pump emulator listening on `port` (0 = ephemeral)."""
    emu = PumpEmulator(clock)
    srv = LineDeviceServer(emu.handle, port=port)
    srv.start()
    return emu, srv


# --------------------------------------------------------------------------
# stimulus source: a machine element releasing scheduled messages
# --------------------------------------------------------------------------


def stimulus_source(
    schedule: Sequence[tuple[Fraction | int, Message]], id: str = "stimulus"
):
    """Machine parts for a scheduled message source.

    `schedule` lists (due, message) with non-decreasing due times measured
    from now.  Returns (object, handlers, rule): the element to place in the
    initial configuration, its {klass: (mte, tick)} entry, and the zero-time
    release rule.  Messages due at the same instant are released in schedule
    order within one zero-time fixpoint.
    """
    pending = tuple((Fraction(due), m) for due, m in schedule)
    for (a, _), (b, _) in zip(pending, pending[1:]):
        if b < a:
            raise ValueError("stimulus schedule must be sorted by due time")

    # the schedule itself is static rule data and lives in this closure; the
    # object carries only a cursor and an elapsed-time accumulator, so the
    # per-round cost is flat no matter how many entries are queued
    obj = ModelObject(id, "stimulus-source", {"next": 0, "elapsed": Fraction(0)})

    def mte(o: ModelObject) -> TimeInf:
        i = o["next"]
        return pending[i][0] - o["elapsed"] if i < len(pending) else INF

    def tick(o: ModelObject, t: Fraction) -> ModelObject:
        return o.put(elapsed=o["elapsed"] + t)

    def due(o: ModelObject, config) -> bool:
        i = o["next"]
        return i < len(pending) and pending[i][0] == o["elapsed"]

    def release(o: ModelObject):
        i = o["next"]
        return [o.put(next=i + 1), pending[i][1]]

    rule = ObjectRule("stimulus-release", "stimulus-source", due, release)
    return obj, {"stimulus-source": (mte, tick)}, rule


# --------------------------------------------------------------------------
# heart stimulus: pacing-rate requests sent as tick-server interrupts
# --------------------------------------------------------------------------


def bpm_to_period_units(bpm: Fraction | int, grain_ms: Fraction | int = 10) -> Fraction:
    """Beats per minute -> pacing period in logical units of `grain_ms`."""
    bpm = Fraction(bpm)
    if bpm <= 0:
        raise ValueError("bpm must be positive")
    return Fraction(60_000) / bpm / Fraction(grain_ms)


STRESS_PERIOD_PAYLOAD = "set-period 50"  # 120 bpm at a 10 ms grain


class HeartStimulus:
    """Sends pacing-period requests to the tick server's interrupt port.

    Scripted mode: `start()` streams the stress request periodically until
    `stop()`.  Interactive mode: `send_bpm(n)` forwards one request.  Send
    failures are retried with a bounded backoff and recorded.
    """

    def __init__(
        self,
        host: str = "127.0.0.1",
        intr_port: int = 4445,
        interval_s: float = 1.0,
        payload: str = STRESS_PERIOD_PAYLOAD,
        grain_ms: Fraction | int = 10,
        send: Callable[[str], None] | None = None,
        retries: int = 3,
        backoff_s: float = 0.05,
    ):
        self.host = host
        self.intr_port = intr_port
        self.interval_s = interval_s
        self.payload = payload
        self.grain_ms = Fraction(grain_ms)
        self._send = send or (lambda p: send_interrupt(self.host, self.intr_port, p))
        self.retries = retries
        self.backoff_s = backoff_s
        self.failures: list[str] = []
        self.sent: list[str] = []
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    def _send_with_retry(self, payload: str) -> bool:
        delay = self.backoff_s
        for attempt in range(self.retries + 1):
            try:
                self._send(payload)
            except OSError as exc:
                self.failures.append(f"{payload!r}: {exc}")
                if attempt < self.retries:
                    time.sleep(delay)
                    delay *= 2
                continue
            self.sent.append(payload)
            return True
        return False

    def send_bpm(self, bpm: Fraction | int) -> bool:
        period = bpm_to_period_units(bpm, self.grain_ms)
        return self._send_with_retry(f"set-period {rat_str(period)}")

    def start(self) -> None:
        self._stop.clear()
        self._thread = threading.Thread(target=self._loop, daemon=True)
        self._thread.start()

    def _loop(self) -> None:
        while not self._stop.is_set():
            self._send_with_retry(self.payload)
            if self._stop.wait(self.interval_s):
                return

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=5)
