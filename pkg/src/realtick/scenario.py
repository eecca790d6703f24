"""Scenario configuration: one JSON file describes one runnable setup.

A scenario names a machine instance (pacemaker or pump), the logical time
grain, the tick-server and device endpoints, the shaper parameters, an
optional scheduled stimulus, and the run horizon.  The same scenario runs
in logical mode (deterministic, in-process, no wall clock) or physical
mode (live tick server, TCP devices).

Schema (all times in logical units unless the key says ms; rationals may
be written as integers or strings like "3/2" or "0.5"):

    {
      "name": "pump",
      "machine": "pump",                  // "pacemaker" | "pump"
      "grain_ms": 1000,
      "horizon": 300,
      "mode": "logical",                  // default mode; CLI may override
      "tick_server": {"host": "127.0.0.1", "port": 4444, "intr_port": 4445},
      "device": {"host": "127.0.0.1", "port": 1234},
      "shaper": { ... ShaperParams fields ... },   // optional: instance default
      "initial_value": 0,                 // optional: shaper start value
      "stimulus": [{"due": 9, "message": "set-mode", "args": ["bolus"]}],
      "bolus_rate_ml_hr": 60,             // pump only
      "max_te": null                      // optional per-request cap
    }

Keys starting with "comment" are ignored everywhere, so a shipped file can
say which numbers are device-mandated and which are chosen defaults.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields as dc_fields
from fractions import Fraction
from pathlib import Path
from typing import Sequence

from realtick.core import INF, Message, TimeInf, msg, parse_rat, rat_str
from realtick.devices import stimulus_source
from realtick.machines import (
    BOLUS_RATE_ML_PER_HR,
    PACING_GRAIN_MS,
    PACING_PARAMS,
    PUMP_GRAIN_MS,
    PUMP_PARAMS,
    MachineBundle,
    build_pacemaker,
    build_pump,
    pacemaker_adapters,
    pump_adapters,
)
from realtick.shaper import ShaperParams
from realtick.wrapper import AdapterTable


class ScenarioError(ValueError):
    pass


MACHINES = ("pacemaker", "pump")
MODES = ("logical", "physical")

_DEFAULT_PARAMS = {"pacemaker": PACING_PARAMS, "pump": PUMP_PARAMS}
_DEFAULT_GRAIN = {"pacemaker": PACING_GRAIN_MS, "pump": PUMP_GRAIN_MS}
_DEFAULT_DEVICE_PORT = {"pacemaker": 4451, "pump": 1234}


@dataclass(frozen=True)
class Endpoint:
    host: str = "127.0.0.1"
    port: int = 0


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    machine: str
    grain_ms: Fraction
    horizon: Fraction | None
    mode: str = "logical"
    tick_host: str = "127.0.0.1"
    tick_port: int = 4444
    intr_port: int = 4445
    device: Endpoint = field(default_factory=Endpoint)
    shaper: ShaperParams | None = None
    initial_value: Fraction | None = None
    stimulus: tuple[tuple[Fraction, Message], ...] = ()
    bolus_rate_ml_hr: Fraction = BOLUS_RATE_ML_PER_HR
    max_te: TimeInf = INF

    def __post_init__(self) -> None:
        if self.machine not in MACHINES:
            raise ScenarioError(f"unknown machine {self.machine!r}")
        if self.mode not in MODES:
            raise ScenarioError(f"unknown mode {self.mode!r}")
        if self.grain_ms <= 0:
            raise ScenarioError("grain_ms must be positive")
        if self.horizon is not None and self.horizon <= 0:
            raise ScenarioError("horizon must be positive when given")
        ports = [self.tick_port, self.intr_port, self.device.port]
        live = [p for p in ports if p != 0]
        if len(set(live)) != len(live):
            raise ScenarioError(f"ports must be distinct, got {ports}")

    @property
    def params(self) -> ShaperParams:
        return self.shaper or _DEFAULT_PARAMS[self.machine]


def _rat(value) -> Fraction:
    if isinstance(value, bool) or value is None:
        raise ScenarioError(f"expected a rational, got {value!r}")
    if isinstance(value, (int, Fraction)):
        return Fraction(value)
    if isinstance(value, str):
        return parse_rat(value)
    raise ScenarioError(f"expected a rational, got {value!r}")


def _shaper_from_json(d: dict) -> ShaperParams:
    kwargs = {}
    names = {f.name for f in dc_fields(ShaperParams)}
    for key, value in d.items():
        if key.startswith("comment"):
            continue
        if key not in names:
            raise ScenarioError(f"unknown shaper field {key!r}")
        kwargs[key] = int(value) if key == "max_stress_count" else _rat(value)
    missing = names - kwargs.keys()
    if missing:
        raise ScenarioError(f"shaper config missing fields: {sorted(missing)}")
    return ShaperParams(**kwargs)


def _stimulus_from_json(entries: Sequence[dict]) -> tuple[tuple[Fraction, Message], ...]:
    out = []
    for e in entries:
        args = []
        for a in e.get("args", ()):
            if isinstance(a, bool) or isinstance(a, float):
                raise ScenarioError(
                    f"stimulus args must be exact rationals or strings, got {a!r}"
                )
            if isinstance(a, int) or (isinstance(a, str) and _is_rat(a)):
                args.append(_rat(a))
            else:
                args.append(a)
        out.append((_rat(e["due"]), msg(e["message"], *args)))
    return tuple(out)


def _is_rat(s: str) -> bool:
    try:
        parse_rat(s)
    except (ValueError, ZeroDivisionError):
        return False
    return True


def scenario_from_json(d: dict) -> ScenarioConfig:
    d = {k: v for k, v in d.items() if not k.startswith("comment")}
    try:
        machine = d["machine"]
    except KeyError:
        raise ScenarioError("scenario needs a 'machine' field")
    tick = d.get("tick_server", {})
    dev = d.get("device", {})
    known = {
        "name", "machine", "grain_ms", "horizon", "mode", "tick_server",
        "device", "shaper", "initial_value", "stimulus", "bolus_rate_ml_hr",
        "max_te",
    }
    unknown = set(d) - known
    if unknown:
        raise ScenarioError(f"unknown scenario fields: {sorted(unknown)}")
    return ScenarioConfig(
        name=d.get("name", machine),
        machine=machine,
        grain_ms=_rat(d["grain_ms"]) if "grain_ms" in d else _DEFAULT_GRAIN.get(machine, Fraction(1)),
        horizon=_rat(d["horizon"]) if d.get("horizon") is not None else None,
        mode=d.get("mode", "logical"),
        tick_host=tick.get("host", "127.0.0.1"),
        tick_port=int(tick.get("port", 4444)),
        intr_port=int(tick.get("intr_port", 4445)),
        device=Endpoint(
            dev.get("host", "127.0.0.1"),
            int(dev.get("port", _DEFAULT_DEVICE_PORT.get(machine, 0))),
        ),
        shaper=_shaper_from_json(d["shaper"]) if "shaper" in d else None,
        initial_value=_rat(d["initial_value"]) if d.get("initial_value") is not None else None,
        stimulus=_stimulus_from_json(d.get("stimulus", ())),
        bolus_rate_ml_hr=_rat(d.get("bolus_rate_ml_hr", BOLUS_RATE_ML_PER_HR)),
        max_te=INF if d.get("max_te") is None else _rat(d["max_te"]),
    )


def load_scenario(path: str | Path) -> ScenarioConfig:
    with open(path) as f:
        return scenario_from_json(json.load(f))


def scenario_to_json(sc: ScenarioConfig) -> dict:
    return {
        "name": sc.name,
        "machine": sc.machine,
        "grain_ms": rat_str(sc.grain_ms),
        "horizon": None if sc.horizon is None else rat_str(sc.horizon),
        "mode": sc.mode,
        "tick_server": {"host": sc.tick_host, "port": sc.tick_port, "intr_port": sc.intr_port},
        "device": {"host": sc.device.host, "port": sc.device.port},
        "shaper": {
            f.name: (
                getattr(sc.params, f.name)
                if f.name == "max_stress_count"
                else rat_str(getattr(sc.params, f.name))
            )
            for f in dc_fields(ShaperParams)
        },
        "initial_value": None if sc.initial_value is None else rat_str(sc.initial_value),
        "stimulus": [
            {"due": rat_str(due), "message": m.name,
             "args": [rat_str(a) if isinstance(a, (int, Fraction)) else a for a in m.args]}
            for due, m in sc.stimulus
        ],
        "bolus_rate_ml_hr": rat_str(sc.bolus_rate_ml_hr),
        "max_te": None if sc.max_te is INF else rat_str(sc.max_te),
    }


# -- builders ---------------------------------------------------------------


def build_bundle(sc: ScenarioConfig) -> MachineBundle:
    """A fresh machine bundle for one run of this scenario."""
    extra_elements, extra_handlers, extra_rules = (), None, ()
    if sc.stimulus:
        obj, handlers, rule = stimulus_source(sc.stimulus)
        extra_elements, extra_handlers, extra_rules = (obj,), handlers, (rule,)
    build = build_pacemaker if sc.machine == "pacemaker" else build_pump
    bundle = build(
        params=sc.params,
        extra_elements=extra_elements,
        extra_handlers=extra_handlers,
        extra_rules=extra_rules,
    )
    if sc.initial_value is not None:
        shaper = bundle.initial.object(bundle.shaper_id)
        fresh = shaper.put(val=sc.initial_value, next_val=sc.initial_value)
        bundle = MachineBundle(
            name=bundle.name,
            machine=bundle.machine,
            initial=bundle.initial.replace(shaper, fresh),
            params=bundle.params,
            kind_map=bundle.kind_map,
            note_fields=bundle.note_fields,
            shaper_id=bundle.shaper_id,
        )
    return bundle


def build_adapters(sc: ScenarioConfig, device: Endpoint | None = None) -> AdapterTable:
    dev = device or sc.device
    if sc.machine == "pacemaker":
        return pacemaker_adapters(dev.host, dev.port)
    return pump_adapters(dev.host, dev.port, sc.bolus_rate_ml_hr)
