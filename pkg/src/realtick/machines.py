"""The two shaped-device machine instances: pacemaker and infusion pump.

Both share one structure: a command-shaper element intercepts request
messages and, at each period boundary, dispatches a rate-limited,
budget-checked value to the device module.  Every externally meaningful
step also emits a note message (drained and logged, never sent anywhere)
so logical and physical runs produce comparable event logs by
construction.

Message flow (message names in quotes):
    "set-period"/"set-mode"  request        -> shaper.next_val
    boundary (disp == 0)     dispatch       -> note + internal "apply"
    "apply"                  device update  -> outgoing device command
    pacing timer at zero     pace           -> outgoing "shock"
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Mapping, Sequence

from realtick.core import (
    Configuration,
    Direction,
    Message,
    MessageObjectRule,
    ModelObject,
    ObjectRule,
    Rule,
    TimedMachine,
    msg,
)
from realtick.shaper import (
    RejectedRequestError,
    ShaperParams,
    ShaperState,
    StressInterval,
    dispatch_explain,
    initial_state,
    request,
)
from realtick.wrapper import AdapterTable, ClientAction

SHAPER_KLASS = "command-shaper"

# -- the shaper as a machine element ----------------------------------------


def _state_of(obj: ModelObject) -> ShaperState:
    log = tuple(
        StressInterval(Fraction(start), None if end is None else Fraction(end))
        for start, end in obj["log"]
    )
    return ShaperState(obj["val"], obj["next_val"], obj["disp"], log)


def _with_state(obj: ModelObject, state: ShaperState) -> ModelObject:
    log = tuple((iv.start, iv.end) for iv in state.log)
    return obj.put(val=state.val, next_val=state.next_val, disp=state.disp, log=log)


def shaper_object(
    params: ShaperParams, id: str = "shaper", val: Fraction | None = None
) -> ModelObject:
    s = initial_state(params, val)
    return ModelObject(
        id,
        SHAPER_KLASS,
        {"val": s.val, "next_val": s.next_val, "disp": s.disp, "log": (), "now": Fraction(0)},
    )


def shaper_handlers():
    def mte(obj: ModelObject) -> Fraction:
        return obj["disp"]

    def tick(obj: ModelObject, t: Fraction) -> ModelObject:
        return obj.put(disp=obj["disp"] - t, now=obj["now"] + t)

    return {SHAPER_KLASS: (mte, tick)}


def _shaper_rules(
    params: ShaperParams,
    request_message: str,
    decode_value: Callable[[object], Fraction],
) -> list[Rule]:
    """The intercept-and-dispatch rule pair shared by both instances.

    Request consumption is declared before dispatch so a boundary that
    coincides with a pending request dispatches toward the fresh target.
    """

    def consume(m: Message, obj: ModelObject):
        state = _state_of(obj)
        try:
            value = decode_value(m.args[0] if m.args else None)
            state = request(state, params, value)
            accepted = True
        except (RejectedRequestError, ValueError, TypeError, IndexError):
            value = m.args[0] if m.args else None
            accepted = False
        note = msg("request", value, accepted, direction=Direction.OUTGOING)
        return [_with_state(obj, state), note]

    def at_boundary(obj: ModelObject, config: Configuration) -> bool:
        return obj["disp"] == 0

    def do_dispatch(obj: ModelObject):
        state, value, info = dispatch_explain(_state_of(obj), params, obj["now"])
        note = msg(
            "dispatch",
            info.requested,
            info.emitted,
            info.stressful,
            info.denied,
            info.reason,
            direction=Direction.OUTGOING,
        )
        return [_with_state(obj, state), note, msg("apply", value)]

    return [
        MessageObjectRule("consume-request", request_message, SHAPER_KLASS, consume),
        ObjectRule("dispatch", SHAPER_KLASS, at_boundary, do_dispatch),
    ]


NOTE_FIELDS: Mapping[str, Sequence[str]] = {
    "request": ("value", "accepted"),
    "dispatch": ("requested", "emitted", "stressful", "denied", "reason"),
    "shock": ("period_units",),
    "bolus": ("mode",),
    "base": ("mode",),
}


@dataclass(frozen=True)
class MachineBundle:
    """Everything a runner needs to execute one scenario's machine."""

    name: str
    machine: TimedMachine
    initial: Configuration
    params: ShaperParams
    kind_map: Mapping[str, str]
    note_fields: Mapping[str, Sequence[str]]
    shaper_id: str = "shaper"


# -- pacemaker ----------------------------------------------------------------
#
# Values are pacing periods in logical units of the 10 ms grain.  Safe pacing
# is 75 units (750 ms, 80 bpm); the stress band is [50, 200/3] units
# (500-666.67 ms, i.e. 90-120 bpm); periods shorter than 500 ms are outside
# the domain entirely.  The stress budgets are scenario choices: at most 30 s
# in stress, 10 s between stress runs, 3 runs per 3 minutes.

PACING_GRAIN_MS = Fraction(10)

PACING_PARAMS = ShaperParams(
    period=Fraction(1),
    max_stress_duration=Fraction(3000),
    min_relax_gap=Fraction(1000),
    max_stress_count=3,
    count_window=Fraction(18000),
    max_delta_per_period=Fraction(1),
    safe_value=Fraction(75),
    stress_low=Fraction(50),
    stress_high=Fraction(200, 3),
    domain_low=Fraction(50),
    domain_high=Fraction(120),
)

PACEMAKER_KIND_MAP: Mapping[str, str] = {
    "request": "request",
    "dispatch": "dispatch",
    "shock": "pace",
}

STRESS_REQUEST_PERIOD = Fraction(50)  # what a pace acknowledgement asks for


def pacing_module(period: Fraction, id: str = "pm") -> ModelObject:
    return ModelObject(
        id, "pacing-module", {"period": Fraction(period), "next_pace": Fraction(period)}
    )


def pacing_module_handlers():
    def mte(obj: ModelObject) -> Fraction:
        return obj["next_pace"]

    def tick(obj: ModelObject, t: Fraction) -> ModelObject:
        return obj.put(next_pace=obj["next_pace"] - t)

    return {"pacing-module": (mte, tick)}


def build_pacemaker(
    params: ShaperParams = PACING_PARAMS,
    extra_elements: Sequence[ModelObject] = (),
    extra_handlers: Mapping | None = None,
    extra_rules: Sequence[Rule] = (),
) -> MachineBundle:
    def decode_period(arg) -> Fraction:
        return Fraction(arg)

    def apply_period(m: Message, pm: ModelObject):
        value = Fraction(m.args[0])
        return [pm.put(period=value, next_pace=min(pm["next_pace"], value))]

    def pace_due(pm: ModelObject, config: Configuration) -> bool:
        return pm["next_pace"] == 0

    def pace(pm: ModelObject):
        return [
            pm.put(next_pace=pm["period"]),
            msg("shock", pm["period"], direction=Direction.OUTGOING),
        ]

    # environment emissions first, so a message due exactly at a dispatch
    # boundary is consumed before that boundary dispatches
    rules: list[Rule] = list(extra_rules)
    rules.extend(_shaper_rules(params, "set-period", decode_period))
    rules.append(MessageObjectRule("apply-period", "apply", "pacing-module", apply_period))
    rules.append(ObjectRule("pace-due", "pacing-module", pace_due, pace))

    handlers = {**shaper_handlers(), **pacing_module_handlers(), **(extra_handlers or {})}
    machine = TimedMachine(rules, handlers)
    initial = Configuration(
        [shaper_object(params), pacing_module(params.safe_value), *extra_elements]
    )
    return MachineBundle(
        name="pacemaker",
        machine=machine,
        initial=initial,
        params=params,
        kind_map=PACEMAKER_KIND_MAP,
        note_fields=NOTE_FIELDS,
    )


def pacemaker_adapters(host: str, port: int) -> AdapterTable:
    """Pace commands go to the pace sink; its acknowledgement comes back as
    a stress-rate request (the feedback loop that sustains the case study)."""

    def shock_actions(message: Message) -> list[ClientAction]:
        return [ClientAction("pacer-client", host, port, "shock")]

    def on_ack(reply: str) -> list[Message]:
        if reply.strip() == "shocked":
            return [msg("set-period", STRESS_REQUEST_PERIOD)]
        return []

    return AdapterTable(
        out={"shock": shock_actions, "request": lambda m: [], "dispatch": lambda m: []},
        in_={"pacer-client": on_ack},
    )


# -- infusion pump --------------------------------------------------------------
#
# Values are pump modes: 0 = base (stopped; the case study's base rate is
# zero), 1 = bolus (infusing at the bolus rate).  One unit of logical time is
# one second (1000 ms grain).  Mode 1 is the stress state; the budgets are
# the stated dosing rules: a bolus lasts at most 30 s, 10 s between boluses,
# at most 3 boluses per 3-minute window.

PUMP_GRAIN_MS = Fraction(1000)

PUMP_PARAMS = ShaperParams(
    period=Fraction(1),
    max_stress_duration=Fraction(30),
    min_relax_gap=Fraction(10),
    max_stress_count=3,
    count_window=Fraction(180),
    max_delta_per_period=Fraction(1),
    safe_value=Fraction(0),
    stress_low=Fraction(1),
    stress_high=Fraction(1),
    domain_low=Fraction(0),
    domain_high=Fraction(1),
)

PUMP_KIND_MAP: Mapping[str, str] = {
    "request": "request",
    "dispatch": "dispatch",
    "bolus": "pump-cmd",
    "base": "pump-cmd",
}

MODE_BASE = Fraction(0)
MODE_BOLUS = Fraction(1)

BOLUS_RATE_ML_PER_HR = Fraction(60)


def decode_mode(arg) -> Fraction:
    if arg == "bolus":
        return MODE_BOLUS
    if arg == "base":
        return MODE_BASE
    value = Fraction(arg)
    if value not in (MODE_BASE, MODE_BOLUS):
        raise ValueError(f"not a pump mode: {arg!r}")
    return value


def pump_module(mode: Fraction = MODE_BASE, id: str = "pump") -> ModelObject:
    return ModelObject(id, "pump-module", {"mode": Fraction(mode)})


def pump_module_handlers():
    from realtick.core import INF

    return {"pump-module": (lambda obj: INF, lambda obj, t: obj)}


def build_pump(
    params: ShaperParams = PUMP_PARAMS,
    extra_elements: Sequence[ModelObject] = (),
    extra_handlers: Mapping | None = None,
    extra_rules: Sequence[Rule] = (),
) -> MachineBundle:
    def apply_mode(m: Message, pump: ModelObject):
        value = Fraction(m.args[0])
        if value == pump["mode"]:
            return [pump]  # no change: the device hears nothing
        name = "bolus" if value == MODE_BOLUS else "base"
        return [pump.put(mode=value), msg(name, value, direction=Direction.OUTGOING)]

    # environment emissions first, as in build_pacemaker
    rules: list[Rule] = list(extra_rules)
    rules.extend(_shaper_rules(params, "set-mode", decode_mode))
    rules.append(MessageObjectRule("apply-mode", "apply", "pump-module", apply_mode))

    handlers = {**shaper_handlers(), **pump_module_handlers(), **(extra_handlers or {})}
    machine = TimedMachine(rules, handlers)
    initial = Configuration([shaper_object(params), pump_module(), *extra_elements])
    return MachineBundle(
        name="pump",
        machine=machine,
        initial=initial,
        params=params,
        kind_map=PUMP_KIND_MAP,
        note_fields=NOTE_FIELDS,
    )


def pump_adapters(
    host: str, port: int, bolus_rate_ml_hr: Fraction = BOLUS_RATE_ML_PER_HR
) -> AdapterTable:
    """Entering bolus sets the rate and starts the pump; returning to base
    stops it.  The pump's acknowledgements are discarded."""

    def bolus_actions(message: Message) -> list[ClientAction]:
        rate = (
            int(bolus_rate_ml_hr)
            if bolus_rate_ml_hr == int(bolus_rate_ml_hr)
            else bolus_rate_ml_hr
        )
        return [
            ClientAction("pump-client", host, port, f"RAT{rate}"),
            ClientAction("pump-client", host, port, "RUN"),
        ]

    def base_actions(message: Message) -> list[ClientAction]:
        return [ClientAction("pump-client", host, port, "STP")]

    return AdapterTable(
        out={
            "bolus": bolus_actions,
            "base": base_actions,
            "request": lambda m: [],
            "dispatch": lambda m: [],
        },
        in_={},
    )
