"""Command shaper: rate-limits and duty-cycles requested device values.

Requests set a target; the shaper only ever *dispatches* values, once per
period, moving at most max_delta_per_period per step.  Values inside the
stress band [stress_low, stress_high] are budgeted three ways:

- no maximal stressful run longer than max_stress_duration,
- at least min_relax_gap between consecutive runs,
- at most max_stress_count runs intersecting any count_window-long window.

When a budget would be breached, the dispatched value is steered toward
safe_value instead.  All arithmetic is exact (Fraction); the interval log is
the full audit trail of stressful runs.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Iterable

from realtick.core import TickOvershootError, as_time


class ShaperError(Exception):
    pass


class RejectedRequestError(ShaperError):
    """Requested value outside the device domain.  State is unchanged."""


class NotAtBoundaryError(ShaperError):
    """dispatch() called when disp != 0."""


@dataclass(frozen=True)
class StressInterval:
    """One maximal stressful run.  end is None while the run is open."""

    start: Fraction
    end: Fraction | None = None

    @property
    def is_open(self) -> bool:
        return self.end is None

    def length(self, now: Fraction) -> Fraction:
        return (now if self.end is None else self.end) - self.start


@dataclass(frozen=True)
class ShaperParams:
    period: Fraction
    max_stress_duration: Fraction
    min_relax_gap: Fraction
    max_stress_count: int
    count_window: Fraction
    max_delta_per_period: Fraction
    safe_value: Fraction
    stress_low: Fraction
    stress_high: Fraction
    domain_low: Fraction
    domain_high: Fraction

    def __post_init__(self) -> None:
        for name in (
            "period",
            "max_stress_duration",
            "min_relax_gap",
            "count_window",
            "max_delta_per_period",
            "safe_value",
            "stress_low",
            "stress_high",
            "domain_low",
            "domain_high",
        ):
            object.__setattr__(self, name, Fraction(getattr(self, name)))
        if self.period <= 0:
            raise ValueError("period must be positive")
        if self.max_delta_per_period <= 0:
            raise ValueError("max_delta_per_period must be positive")
        if self.max_stress_duration < 0 or self.min_relax_gap < 0 or self.count_window < 0:
            raise ValueError("budget durations must be non-negative")
        if self.max_stress_count < 0:
            raise ValueError("max_stress_count must be non-negative")
        if not self.domain_low <= self.safe_value <= self.domain_high:
            raise ValueError("safe_value must lie in the domain")
        if self.is_stressful(self.safe_value):
            raise ValueError("safe_value must not be stressful")
        # Steering toward safe_value must never pass through the stress band:
        # the band has to touch the domain edge opposite safe_value.
        if self.stress_low <= self.stress_high:  # non-empty band
            if self.safe_value > self.stress_high and self.stress_low > self.domain_low:
                raise ValueError("domain values below the stress band are unreachable-safe")
            if self.safe_value < self.stress_low and self.stress_high < self.domain_high:
                raise ValueError("domain values above the stress band are unreachable-safe")

    def is_stressful(self, value: Fraction) -> bool:
        return self.stress_low <= Fraction(value) <= self.stress_high

    def in_domain(self, value: Fraction) -> bool:
        return self.domain_low <= Fraction(value) <= self.domain_high

    def exit_steps(self, value: Fraction) -> int:
        """Dispatches needed to leave the stress band, steering to safe_value."""
        v = Fraction(value)
        steps = 0
        while self.is_stressful(v):
            v = move_toward(v, self.safe_value, self.max_delta_per_period)
            steps += 1
        return steps


@dataclass(frozen=True)
class ShaperState:
    val: Fraction
    next_val: Fraction
    disp: Fraction
    log: tuple[StressInterval, ...] = ()


@dataclass(frozen=True)
class DispatchInfo:
    """What one boundary decided, for event records and the operator UI."""

    requested: Fraction
    emitted: Fraction
    stressful: bool
    denied: bool
    reason: str  # "", "duration", "gap", or "window"


def initial_state(params: ShaperParams, val: Fraction | None = None) -> ShaperState:
    v = params.safe_value if val is None else Fraction(val)
    if not params.in_domain(v):
        raise RejectedRequestError(f"initial value {v} outside domain")
    return ShaperState(val=v, next_val=v, disp=params.period, log=())


def move_toward(current: Fraction, target: Fraction, limit: Fraction) -> Fraction:
    """current stepped toward target by at most limit."""
    current, target = Fraction(current), Fraction(target)
    if target > current:
        return min(target, current + limit)
    return max(target, current - limit)


def request(state: ShaperState, params: ShaperParams, value: Fraction) -> ShaperState:
    value = Fraction(value)
    if not params.in_domain(value):
        raise RejectedRequestError(f"requested value {value} outside domain "
                                   f"[{params.domain_low}, {params.domain_high}]")
    return replace(state, next_val=value)


def _open_interval(log: tuple[StressInterval, ...]) -> StressInterval | None:
    if log and log[-1].is_open:
        return log[-1]
    return None


def _last_closed_end(log: tuple[StressInterval, ...]) -> Fraction | None:
    ends = [iv.end for iv in log if iv.end is not None]
    return max(ends) if ends else None


def _count_intersecting(
    log: tuple[StressInterval, ...], now: Fraction, params: ShaperParams
) -> int:
    """Intervals touching [now - count_window, now]; open ones count."""
    lo = now - params.count_window
    n = 0
    for iv in log:
        end = now if iv.end is None else iv.end
        if end >= lo and iv.start <= now:
            n += 1
    return n


def _budget_reason(
    log: tuple[StressInterval, ...], now: Fraction, params: ShaperParams, exit_steps: int
) -> str:
    """Why a stressful emission at `now` would breach a budget ("" = allowed).

    exit_steps is how many further dispatches a run started/continued now
    would need before it can close; the duration check pre-charges that time
    so a run can always ramp back out within max_stress_duration.
    """
    cost = exit_steps * params.period
    open_iv = _open_interval(log)
    if open_iv is not None:
        if (now - open_iv.start) + cost > params.max_stress_duration:
            return "duration"
        if _count_intersecting(log, now, params) > params.max_stress_count:
            return "window"
        return ""
    if cost > params.max_stress_duration:
        return "duration"
    last_end = _last_closed_end(log)
    if last_end is not None and now - last_end < params.min_relax_gap:
        return "gap"
    if _count_intersecting(log, now, params) + 1 > params.max_stress_count:
        return "window"
    return ""


def stress_budget_ok(
    log: tuple[StressInterval, ...], now: Fraction, params: ShaperParams
) -> bool:
    """True iff one more period of stress starting/continuing at `now` fits
    every budget: duration cap, relax gap since the last run (when not in a
    run), and the windowed run count."""
    return _budget_reason(log, Fraction(now), params, 1) == ""


def prune_log(
    log: tuple[StressInterval, ...], now: Fraction, params: ShaperParams
) -> tuple[StressInterval, ...]:
    """Drop closed intervals ending before now - count_window.

    Straddling intervals are retained.  Budget decisions are unchanged by
    pruning provided min_relax_gap <= count_window (any pruned end already
    satisfies the gap); both shipped scenarios satisfy that.
    """
    lo = Fraction(now) - params.count_window
    return tuple(iv for iv in log if iv.end is None or iv.end >= lo)


def _update_log(
    log: tuple[StressInterval, ...], now: Fraction, stressful: bool
) -> tuple[StressInterval, ...]:
    open_iv = _open_interval(log)
    if stressful and open_iv is None:
        return log + (StressInterval(start=now),)
    if not stressful and open_iv is not None:
        return log[:-1] + (StressInterval(open_iv.start, now),)
    return log


def dispatch_explain(
    state: ShaperState, params: ShaperParams, now: Fraction
) -> tuple[ShaperState, Fraction, DispatchInfo]:
    """One boundary step: ramp toward the target, steered by the budgets."""
    now = as_time(now)
    if state.disp != 0:
        raise NotAtBoundaryError(f"dispatch with disp={state.disp}")
    log = prune_log(state.log, now, params)
    ramp = move_toward(state.val, state.next_val, params.max_delta_per_period)
    denied = False
    reason = ""
    if params.is_stressful(ramp):
        reason = _budget_reason(log, now, params, params.exit_steps(ramp))
        if reason == "":
            value = ramp
        else:
            denied = True
            value = move_toward(state.val, params.safe_value, params.max_delta_per_period)
    elif params.is_stressful(state.next_val):
        # Target is stressful; only approach it while entry is affordable,
        # otherwise hold course toward safe instead of idling at the band edge.
        reason = _budget_reason(log, now, params, 1)
        if reason == "":
            value = ramp
        else:
            denied = True
            value = move_toward(state.val, params.safe_value, params.max_delta_per_period)
    else:
        value = ramp
    new_log = _update_log(log, now, params.is_stressful(value))
    new_state = ShaperState(val=value, next_val=state.next_val,
                            disp=params.period, log=new_log)
    info = DispatchInfo(
        requested=state.next_val,
        emitted=value,
        stressful=params.is_stressful(value),
        denied=denied,
        reason=reason,
    )
    return new_state, value, info


def dispatch(
    state: ShaperState, params: ShaperParams, now: Fraction
) -> tuple[ShaperState, Fraction]:
    new_state, value, _ = dispatch_explain(state, params, now)
    return new_state, value


def shaper_mte(state: ShaperState) -> Fraction:
    return state.disp


def shaper_tick(state: ShaperState, t: Fraction) -> ShaperState:
    t = as_time(t)
    if t > state.disp:
        raise TickOvershootError(f"shaper tick {t} exceeds disp {state.disp}")
    return replace(state, disp=state.disp - t)
