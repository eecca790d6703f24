"""Deterministic timed state machines executed against wall-clock time.

Layers, bottom to top:

- ``core``: rational logical time, multiset configurations, zero-time rules,
  the mte/tick timed-execution contract.
- ``shaper``: a rate/duty-cycle command shaper that filters requested device
  values through duration, relax-gap, and windowed-count budgets.
- ``clock`` / ``tickserver``: wall-clock tick sessions over TCP; a model asks
  for at most its maximal time elapse and is woken on time or on interrupt.
- ``wrapper``: connects a machine to the tick server and maps its external
  messages onto one-shot TCP device clients.
- ``devices``: pacemaker and syringe-pump emulators plus scripted stimulus
  sources, usable in-process or as standalone TCP servers.
- ``machines``: ready-made pacemaker/pump machine instances wired through the
  command shaper.
- ``scenario`` / ``harness`` / ``gateway``: scenario configs, logical and
  physical runners, safety checking, jitter reports, and the operator HTTP/WS
  gateway.
"""

from realtick.core import (
    INF,
    Configuration,
    Direction,
    Infinity,
    Message,
    ModelObject,
    TimedMachine,
    TimeInf,
    as_time,
    msg,
)
from realtick.shaper import ShaperParams, ShaperState, StressInterval

__all__ = [
    "INF",
    "Configuration",
    "Direction",
    "Infinity",
    "Message",
    "ModelObject",
    "TimedMachine",
    "TimeInf",
    "as_time",
    "msg",
    "ShaperParams",
    "ShaperState",
    "StressInterval",
]

__version__ = "0.1.0"
