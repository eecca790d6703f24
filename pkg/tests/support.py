"""Shared test fixtures: a toy countdown machine, random configuration
generators, and an all-orders normal-form explorer used for confluence
checks at desk scale."""

from __future__ import annotations

import random
from fractions import Fraction

from realtick.core import (
    INF,
    Configuration,
    Direction,
    Message,
    ModelObject,
    ObjectRule,
    TimedMachine,
    msg,
)


def timer(id: str, remaining, period) -> ModelObject:
    return ModelObject(
        id, "timer", {"remaining": Fraction(remaining), "period": Fraction(period)}
    )


def timer_machine() -> TimedMachine:
    """Countdown timers that emit an internal note and reset on expiry."""
    fire = ObjectRule(
        "fire",
        "timer",
        guard=lambda obj, cfg: obj["remaining"] == 0,
        effect=lambda obj: (
            obj.put(remaining=obj["period"]),
            msg("fired", obj.id),
        ),
    )
    handlers = {
        "timer": (
            lambda obj: obj["remaining"],
            lambda obj, t: obj.put(remaining=obj["remaining"] - t),
        )
    }
    return TimedMachine([fire], handlers)


def random_time(rng: random.Random) -> Fraction:
    return Fraction(rng.randint(0, 400), rng.choice([1, 1, 2, 4, 5, 10]))


def random_config(rng: random.Random, max_elements: int = 6) -> Configuration:
    """Random mix of timers and inert messages for algebra properties."""
    elements = []
    n = rng.randint(0, max_elements)
    for i in range(n):
        if rng.random() < 0.6:
            elements.append(timer(f"t{i}", random_time(rng), random_time(rng) + 1))
        else:
            direction = rng.choice(list(Direction))
            elements.append(
                Message("note", (rng.randint(0, 9), "x" * rng.randint(0, 2)), direction)
            )
    return Configuration(elements)


def all_normal_forms(
    machine: TimedMachine, config: Configuration, max_states: int = 20_000
) -> set[Configuration]:
    """Explore every application order allowed by the rule priority: at each
    state, branch over all match positions of the first enabled rule."""
    seen = {config}
    frontier = [config]
    normals: set[Configuration] = set()
    while frontier:
        state = frontier.pop()
        nexts = machine.enabled_candidates(state)
        if not nexts:
            normals.add(state)
            continue
        for nxt in nexts:
            if nxt not in seen:
                seen.add(nxt)
                frontier.append(nxt)
                if len(seen) > max_states:
                    raise AssertionError("state space blew past the desk-scale bound")
    return normals
