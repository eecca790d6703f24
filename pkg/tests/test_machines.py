"""Tests for the pacemaker and pump machine instances: rule priorities,
device-module updates, note emission, desk-scale traces, and confluence on
reachable configurations."""

from fractions import Fraction

import pytest

from realtick.core import (
    Configuration,
    Direction,
    config_from_json,
    config_to_json,
    msg,
)
from realtick.devices import stimulus_source
from realtick.machines import (
    MODE_BASE,
    MODE_BOLUS,
    PACING_PARAMS,
    PUMP_PARAMS,
    build_pacemaker,
    build_pump,
    decode_mode,
    pacemaker_adapters,
    pacing_module,
    pump_adapters,
    pump_module,
    shaper_object,
)
from tests.support import all_normal_forms

F = Fraction


def drive(bundle, horizon, inject=None):
    """Minimal logical driver: fixpoint, collect outgoing, advance by mte.

    `inject` maps a logical time to messages delivered just after that
    instant's fixpoint (standing in for adapter feedback).  Returns the
    final configuration and [(time, message), ...] for all drained output.
    """
    inject = dict(inject or {})
    machine, config = bundle.machine, bundle.initial
    t = F(0)
    events = []
    while t < horizon:
        while True:
            config = machine.zero_step(config)
            config, out = config.drain_outgoing()
            events.extend((t, m) for m in out)
            if not out:
                break
        if t in inject:
            config = config.inject(inject.pop(t))
            continue
        step = machine.mte(config)
        step = min(step, horizon - t)
        config = machine.tick(config, step)
        t += step
    return config, events


def outgoing(events, name):
    return [(t, m) for t, m in events if m.name == name]


# --------------------------------------------------------------------------
# element-level behavior
# --------------------------------------------------------------------------


def test_pacing_module_timer_mte():
    bundle = build_pacemaker()
    pm = pacing_module(F(75)).put(next_pace=F(3))
    assert bundle.machine.mte(Configuration([pm])) == 3


def test_machine_mte_is_min_over_elements():
    bundle = build_pacemaker()
    shaper = shaper_object(PACING_PARAMS)  # disp = 1
    pm = pacing_module(F(75)).put(next_pace=F(3))
    assert bundle.machine.mte(Configuration([shaper, pm])) == 1


def test_request_message_updates_target():
    bundle = build_pacemaker()
    config = bundle.initial.inject([msg("set-period", F(50))])
    config = bundle.machine.zero_step(config)
    assert config.object("shaper")["next_val"] == 50
    config, out = config.drain_outgoing()
    notes = [m for m in out if m.name == "request"]
    assert notes == [msg("request", F(50), True, direction=Direction.OUTGOING)]


def test_out_of_domain_request_is_rejected_and_noted():
    bundle = build_pacemaker()
    config = bundle.initial.inject([msg("set-period", F(200))])
    config = bundle.machine.zero_step(config)
    assert config.object("shaper")["next_val"] == 75  # unchanged
    config, out = config.drain_outgoing()
    notes = [m for m in out if m.name == "request"]
    assert notes == [msg("request", F(200), False, direction=Direction.OUTGOING)]


def test_request_consumed_before_boundary_dispatch():
    bundle = build_pacemaker()
    shaper = shaper_object(PACING_PARAMS).put(disp=F(0))
    config = Configuration([shaper, pacing_module(F(75))])
    config = config.inject([msg("set-period", F(60))])
    config = bundle.machine.zero_step(config)
    config, out = config.drain_outgoing()
    dispatches = [m for m in out if m.name == "dispatch"]
    assert len(dispatches) == 1
    requested, emitted, stressful, denied, reason = dispatches[0].args
    assert requested == 60
    assert emitted == 74  # one rate-limited step toward the fresh target
    assert not stressful and not denied and reason == ""


def test_apply_period_clamps_pending_pace():
    bundle = build_pacemaker()
    pm = pacing_module(F(75)).put(next_pace=F(40))
    config = Configuration([pm]).inject([msg("apply", F(50))])
    config = bundle.machine.zero_step(config)
    assert config.object("pm")["period"] == 50
    assert config.object("pm")["next_pace"] == 40  # already sooner: kept

    pm = pacing_module(F(75)).put(next_pace=F(40))
    config = Configuration([pm]).inject([msg("apply", F(30))])
    config = bundle.machine.zero_step(config)
    assert config.object("pm")["next_pace"] == 30  # shorter period pulls it in


def test_pace_at_zero_emits_shock_and_resets():
    bundle = build_pacemaker()
    pm = pacing_module(F(75)).put(next_pace=F(0))
    config = bundle.machine.zero_step(Configuration([pm]))
    config, out = config.drain_outgoing()
    assert out == (msg("shock", F(75), direction=Direction.OUTGOING),)
    assert config.object("pm")["next_pace"] == 75


def test_decode_mode():
    assert decode_mode("bolus") == MODE_BOLUS
    assert decode_mode("base") == MODE_BASE
    assert decode_mode(1) == MODE_BOLUS
    assert decode_mode("0") == MODE_BASE
    with pytest.raises(ValueError):
        decode_mode("2")
    with pytest.raises(ValueError):
        decode_mode("fast")


def test_pump_mode_change_emits_device_command_once():
    bundle = build_pump()
    config = Configuration([pump_module()]).inject([msg("apply", MODE_BOLUS)])
    config = bundle.machine.zero_step(config)
    config, out = config.drain_outgoing()
    assert out == (msg("bolus", MODE_BOLUS, direction=Direction.OUTGOING),)
    assert config.object("pump")["mode"] == MODE_BOLUS

    # re-applying the same mode is silent
    config = config.inject([msg("apply", MODE_BOLUS)])
    config = bundle.machine.zero_step(config)
    config, out = config.drain_outgoing()
    assert out == ()


# --------------------------------------------------------------------------
# desk-scale traces (hand-derived)
# --------------------------------------------------------------------------


def pump_with_schedule(schedule):
    obj, handlers, rule = stimulus_source(
        [(t, msg("set-mode", "bolus")) for t in schedule]
    )
    return build_pump(extra_elements=[obj], extra_handlers=handlers, extra_rules=[rule])


def test_pump_desk_trace_bolus_start_and_forced_stop():
    # Hand trace with boluses requested at 9, 11, 12 and nothing else:
    # the mode enters bolus exactly at 9; with max stress duration 30 and a
    # one-step exit, the boundary at 39 must leave (30 + 1 > 30), so the
    # stop command lands exactly at 39 and the run [9, 39] has length 30.
    bundle = pump_with_schedule([9, 11, 12])
    final, events = drive(bundle, horizon=F(40))
    assert [(t, m.args[0]) for t, m in outgoing(events, "bolus")] == [(F(9), 1)]
    assert [(t, m.args[0]) for t, m in outgoing(events, "base")] == [(F(39), 0)]
    assert final.object("pump")["mode"] == MODE_BASE
    # denial at 39 is recorded on the dispatch note
    denied = [
        (t, m.args[4]) for t, m in outgoing(events, "dispatch") if m.args[3] is True
    ]
    assert denied[0] == (F(39), "duration")


def test_pump_requests_at_due_instants_are_noted():
    bundle = pump_with_schedule([9, 11, 12])
    _, events = drive(bundle, horizon=F(13))
    req_times = [t for t, _ in outgoing(events, "request")]
    assert req_times == [F(9), F(11), F(12)]


def test_pacemaker_desk_trace_ramp_and_pace():
    # Stress request at the first pace (75): the period then ramps one unit
    # per dispatch, 75 down toward 50, entering the stress band at 66.
    bundle = build_pacemaker()
    inject = {F(75): [msg("set-period", F(50))]}
    final, events = drive(bundle, horizon=F(90), inject=inject)
    paces = outgoing(events, "shock")
    assert paces[0][0] == F(75)  # first pace at the initial safe period
    emitted = [(t, m.args[1]) for t, m in outgoing(events, "dispatch")]
    by_time = dict(emitted)
    assert by_time[F(76)] == 74
    assert by_time[F(84)] == 66  # first stressful value
    assert by_time[F(89)] == 61
    # rate limit holds along the whole trace
    vals = [v for _, v in emitted]
    assert all(abs(b - a) <= 1 for a, b in zip(vals, vals[1:]))


def test_pacemaker_pace_intervals_follow_the_applied_period():
    # Stress request at the first pace.  The ramp and the running countdown
    # track each other one unit per unit, so the second pace still lands a
    # full initial period later; from then on the applied 50-unit period
    # rules, shortening the intervals.
    bundle = build_pacemaker()
    inject = {F(75): [msg("set-period", F(50))]}
    _, events = drive(bundle, horizon=F(260), inject=inject)
    paces = [t for t, _ in outgoing(events, "shock")]
    assert paces == [75, 150, 200, 250]
    periods = [m.args[0] for _, m in outgoing(events, "shock")]
    assert periods == [75, 50, 50, 50]


# --------------------------------------------------------------------------
# confluence at desk scale: reachable mixed configurations
# --------------------------------------------------------------------------


def test_pacemaker_confluence_at_loaded_boundary():
    bundle = build_pacemaker()
    shaper = shaper_object(PACING_PARAMS).put(disp=F(0))
    pm = pacing_module(F(75)).put(next_pace=F(0))
    config = Configuration([shaper, pm]).inject([msg("set-period", F(50))])
    forms = all_normal_forms(bundle.machine, config)
    assert len(forms) == 1


def test_pacemaker_confluence_with_duplicate_requests():
    bundle = build_pacemaker()
    shaper = shaper_object(PACING_PARAMS).put(disp=F(0))
    config = Configuration([shaper, pacing_module(F(75))]).inject(
        [msg("set-period", F(50)), msg("set-period", F(50))]
    )
    forms = all_normal_forms(bundle.machine, config)
    assert len(forms) == 1


def test_pump_confluence_at_due_boundary():
    bundle = pump_with_schedule([0])
    forms = all_normal_forms(bundle.machine, bundle.initial)
    assert len(forms) == 1


# --------------------------------------------------------------------------
# adapters and serialization
# --------------------------------------------------------------------------


def test_pacemaker_adapter_round_trip():
    table = pacemaker_adapters("127.0.0.1", 4451)
    actions = table.actions_for(msg("shock", F(75), direction=Direction.OUTGOING))
    assert [(a.client_id, a.send) for a in actions] == [("pacer-client", "shock")]
    products = table.decode_reply("pacer-client", "shocked\n")
    assert products == (msg("set-period", F(50)),)
    assert table.decode_reply("pacer-client", "ERR\n") == ()
    # notes map to no actions
    assert table.actions_for(msg("dispatch", direction=Direction.OUTGOING)) == []


def test_pump_adapter_commands():
    table = pump_adapters("127.0.0.1", 1234)
    bolus = table.actions_for(msg("bolus", MODE_BOLUS, direction=Direction.OUTGOING))
    assert [a.send for a in bolus] == ["RAT60", "RUN"]
    assert all(a.port == 1234 for a in bolus)
    base = table.actions_for(msg("base", MODE_BASE, direction=Direction.OUTGOING))
    assert [a.send for a in base] == ["STP"]
    assert table.decode_reply("pump-client", "OK\n") == ()  # replies discarded


def test_machine_configuration_survives_json_round_trip():
    bundle = pump_with_schedule([9, 11])
    config, _ = drive(bundle, horizon=F(10))  # includes a non-empty stress log
    data = config_to_json(config)
    assert config_from_json(data) == config
