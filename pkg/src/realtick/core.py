"""Timed machine core: rational logical time, multiset configurations, rules.

A model is a Configuration (a multiset of objects and messages) plus a
TimedMachine that supplies zero-time rewrite rules and per-element timing
hooks.  Logical time is exact: `fractions.Fraction` everywhere, never float.
Execution alternates two phases: apply zero-time rules to a fixpoint
(`zero_step`), then advance time by at most the maximal time elapse
(`mte` / `tick`).  Everything here is deterministic by construction; rules
are tried in declaration order and elements in a canonical sort order.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Any, Callable, Iterable, Iterator, Mapping, Sequence, Union


class Infinity:
    """The unreachable time bound.  Compares above every finite time."""

    _instance: "Infinity | None" = None

    def __new__(cls) -> "Infinity":
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "INF"

    def __eq__(self, other: object) -> bool:
        return other is self

    def __hash__(self) -> int:
        return hash("realtick.INF")

    def __lt__(self, other: object) -> bool:
        return False

    def __le__(self, other: object) -> bool:
        return other is self

    def __gt__(self, other: object) -> bool:
        return other is not self

    def __ge__(self, other: object) -> bool:
        return True


INF = Infinity()

TimeInf = Union[Fraction, Infinity]


def as_time(value: "Fraction | int | str") -> Fraction:
    """Coerce to a non-negative rational logical time."""
    if isinstance(value, bool):
        raise TypeError("bool is not a logical time")
    t = Fraction(value)
    if t < 0:
        raise ValueError(f"logical time must be non-negative, got {t}")
    return t


def time_min(a: TimeInf, b: TimeInf) -> TimeInf:
    """min with INF as the absorbing identity."""
    if isinstance(a, Infinity):
        return b
    if isinstance(b, Infinity):
        return a
    return a if a <= b else b


def rat_str(t: Fraction) -> str:
    """Render a rational compactly: integer, exact decimal, or p/q."""
    if t.denominator == 1:
        return str(t.numerator)
    # exact decimal only when the denominator is 2^a * 5^b
    den = t.denominator
    for p in (2, 5):
        while den % p == 0:
            den //= p
    if den == 1:
        scaled = t
        places = 0
        while scaled.denominator != 1:
            scaled *= 10
            places += 1
        digits = str(abs(scaled.numerator)).rjust(places + 1, "0")
        sign = "-" if t < 0 else ""
        return f"{sign}{digits[:-places]}.{digits[-places:]}"
    return f"{t.numerator}/{t.denominator}"


def parse_rat(text: str) -> Fraction:
    """Parse the forms produced by rat_str ("7", "0.004", "3/2")."""
    return Fraction(text.strip())


class CoreError(Exception):
    """Base for timed-machine engine errors."""


class InvalidConfigurationError(CoreError):
    pass


class UnknownElementError(CoreError):
    pass


class TickOvershootError(CoreError):
    pass


class LivelockSuspectedError(CoreError):
    pass


class Direction(Enum):
    INTERNAL = "internal"
    INCOMING = "in"
    OUTGOING = "out"


# Attribute and argument values.  Tuples nest; objects/messages may nest too.
Value = Any


@dataclass(frozen=True)
class Message:
    name: str
    args: tuple = ()
    direction: Direction = Direction.INTERNAL

    def __repr__(self) -> str:
        inner = ", ".join(repr(a) for a in self.args)
        return f"{self.name}({inner})[{self.direction.value}]"


def msg(name: str, *args: Value, direction: Direction = Direction.INTERNAL) -> Message:
    return Message(name, tuple(args), direction)


class ModelObject:
    """An identified stateful element.  Immutable; `put` returns a copy."""

    __slots__ = ("id", "klass", "_attrs")

    def __init__(self, id: str, klass: str, attrs: Mapping[str, Value] | None = None):
        object.__setattr__(self, "id", id)
        object.__setattr__(self, "klass", klass)
        items = tuple(sorted((attrs or {}).items()))
        object.__setattr__(self, "_attrs", items)

    def __setattr__(self, name: str, value: Value) -> None:
        raise AttributeError("ModelObject is immutable; use put()")

    @property
    def attrs(self) -> dict[str, Value]:
        return dict(self._attrs)

    def get(self, name: str, default: Value = None) -> Value:
        for k, v in self._attrs:
            if k == name:
                return v
        return default

    def __getitem__(self, name: str) -> Value:
        for k, v in self._attrs:
            if k == name:
                return v
        raise KeyError(name)

    def put(self, **changes: Value) -> "ModelObject":
        attrs = self.attrs
        attrs.update(changes)
        return ModelObject(self.id, self.klass, attrs)

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, ModelObject)
            and self.id == other.id
            and self.klass == other.klass
            and self._attrs == other._attrs
        )

    def __hash__(self) -> int:
        return hash((self.id, self.klass, self._attrs))

    def __repr__(self) -> str:
        body = ", ".join(f"{k}: {v!r}" for k, v in self._attrs)
        return f"<{self.id} : {self.klass} | {body}>"


Element = Union[ModelObject, Message]


def _value_key(v: Value) -> tuple:
    if v is None:
        return (0,)
    if isinstance(v, bool):
        return (1, v)
    if isinstance(v, (int, Fraction)):
        return (2, Fraction(v))
    if isinstance(v, str):
        return (3, v)
    if isinstance(v, tuple):
        return (4, tuple(_value_key(x) for x in v))
    if isinstance(v, Message):
        return (5, v.name, _value_key(v.args), v.direction.value)
    if isinstance(v, ModelObject):
        return (6, v.id, v.klass, tuple((k, _value_key(x)) for k, x in v._attrs))
    raise TypeError(f"unsupported value in configuration: {type(v).__name__}")


def canonical_key(el: Element) -> tuple:
    """Total, deterministic order over heterogeneous elements."""
    if isinstance(el, ModelObject):
        return (0, el.id, el.klass, tuple((k, _value_key(v)) for k, v in el._attrs))
    if isinstance(el, Message):
        return (1, el.name, _value_key(el.args), el.direction.value)
    raise TypeError(f"not a configuration element: {type(el).__name__}")


class Configuration:
    """A multiset of elements, stored in canonical order.

    Equality is multiset equality.  Object ids must be unique; message
    duplicates are allowed and preserved.
    """

    __slots__ = ("_elements",)

    def __init__(self, elements: Iterable[Element] = ()):
        elems = tuple(sorted(elements, key=canonical_key))
        seen: set[str] = set()
        for el in elems:
            if isinstance(el, ModelObject):
                if el.id in seen:
                    raise InvalidConfigurationError(f"duplicate object id: {el.id}")
                seen.add(el.id)
        object.__setattr__(self, "_elements", elems)

    @property
    def elements(self) -> tuple[Element, ...]:
        return self._elements

    def __iter__(self) -> Iterator[Element]:
        return iter(self._elements)

    def __len__(self) -> int:
        return len(self._elements)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Configuration) and self._elements == other._elements

    def __hash__(self) -> int:
        return hash(self._elements)

    def __repr__(self) -> str:
        return "{" + " ".join(repr(e) for e in self._elements) + "}"

    def union(self, extra: "Configuration | Iterable[Element]") -> "Configuration":
        other = extra.elements if isinstance(extra, Configuration) else tuple(extra)
        return Configuration(self._elements + tuple(other))

    __or__ = union

    def without(self, *dropped: Element) -> "Configuration":
        """Remove one occurrence of each given element."""
        remaining = list(self._elements)
        for el in dropped:
            remaining.remove(el)  # ValueError if absent, deliberately loud
        return Configuration(remaining)

    def replace(self, old: Element, *new: Element) -> "Configuration":
        remaining = list(self._elements)
        remaining.remove(old)
        remaining.extend(new)
        return Configuration(remaining)

    def objects(self, klass: str | None = None) -> tuple[ModelObject, ...]:
        return tuple(
            el
            for el in self._elements
            if isinstance(el, ModelObject) and (klass is None or el.klass == klass)
        )

    def object(self, id: str) -> ModelObject:
        for el in self._elements:
            if isinstance(el, ModelObject) and el.id == id:
                return el
        raise KeyError(id)

    def messages(self, name: str | None = None) -> tuple[Message, ...]:
        return tuple(
            el
            for el in self._elements
            if isinstance(el, Message) and (name is None or el.name == name)
        )

    @property
    def is_open(self) -> bool:
        """True iff any external message (incoming or outgoing) is present."""
        return any(
            isinstance(el, Message) and el.direction is not Direction.INTERNAL
            for el in self._elements
        )

    def drain_outgoing(self) -> tuple["Configuration", tuple[Message, ...]]:
        """Split off all outgoing messages, sorted by name then payload."""
        out: list[Message] = []
        rest: list[Element] = []
        for el in self._elements:
            if isinstance(el, Message) and el.direction is Direction.OUTGOING:
                out.append(el)
            else:
                rest.append(el)
        out.sort(key=lambda m: (m.name, _value_key(m.args)))
        return Configuration(rest), tuple(out)

    def inject(self, incoming: Iterable[Message]) -> "Configuration":
        """Multiset union of received/internal messages into this configuration."""
        msgs = tuple(incoming)
        for m in msgs:
            if not isinstance(m, Message):
                raise InvalidConfigurationError(f"inject expects messages, got {m!r}")
            if m.direction is Direction.OUTGOING:
                raise InvalidConfigurationError(
                    f"cannot inject outgoing message {m!r}"
                )
        return self.union(msgs)


class Rule:
    """A zero-time rewrite.  candidates() yields every single application,
    enumerated over elements in canonical order."""

    name: str = "?"

    def candidates(self, config: Configuration) -> Iterator[Configuration]:
        raise NotImplementedError


class ObjectRule(Rule):
    def __init__(
        self,
        name: str,
        klass: str,
        guard: Callable[[ModelObject, Configuration], bool],
        effect: Callable[[ModelObject], Iterable[Element]],
    ):
        self.name = name
        self.klass = klass
        self.guard = guard
        self.effect = effect

    def candidates(self, config: Configuration) -> Iterator[Configuration]:
        for obj in config.objects(self.klass):
            if self.guard(obj, config):
                yield config.replace(obj, *self.effect(obj))


class MessageRule(Rule):
    def __init__(
        self,
        name: str,
        message: str,
        effect: Callable[[Message], Iterable[Element]],
        guard: Callable[[Message, Configuration], bool] = lambda m, c: True,
    ):
        self.name = name
        self.message = message
        self.effect = effect
        self.guard = guard

    def candidates(self, config: Configuration) -> Iterator[Configuration]:
        for m in config.messages(self.message):
            if self.guard(m, config):
                yield config.replace(m, *self.effect(m))


class MessageObjectRule(Rule):
    """Consumes one message and rewrites one object in a single step."""

    def __init__(
        self,
        name: str,
        message: str,
        klass: str,
        effect: Callable[[Message, ModelObject], Iterable[Element]],
        guard: Callable[[Message, ModelObject, Configuration], bool] = lambda m, o, c: True,
    ):
        self.name = name
        self.message = message
        self.klass = klass
        self.effect = effect
        self.guard = guard

    def candidates(self, config: Configuration) -> Iterator[Configuration]:
        for m in config.messages(self.message):
            for obj in config.objects(self.klass):
                if self.guard(m, obj, config):
                    yield config.without(m, obj).union(self.effect(m, obj))


ZERO_STEP_BUDGET = 1_000_000

ElementHandler = tuple[
    Callable[[ModelObject], TimeInf], Callable[[ModelObject, Fraction], ModelObject]
]


class TimedMachine:
    """Rules plus per-element timing hooks for one model.

    Object classes are registered with an (mte, tick) handler pair.  Messages
    are timeless by default (mte INF, tick identity); subclasses or
    message_handlers can override that for timed envelopes.

    `default_time_elapse` is carried for completeness; the engine itself
    never consults it.
    """

    def __init__(
        self,
        rules: Sequence[Rule],
        object_handlers: Mapping[str, ElementHandler],
        message_handlers: Mapping[str, ElementHandler] | None = None,
        default_time_elapse: Fraction = Fraction(1),
    ):
        self.rules = tuple(rules)
        self.object_handlers = dict(object_handlers)
        self.message_handlers = dict(message_handlers or {})
        self.default_time_elapse = default_time_elapse

    # -- per-element hooks ------------------------------------------------

    def element_mte(self, el: Element) -> TimeInf:
        if isinstance(el, ModelObject):
            try:
                mte_fn, _ = self.object_handlers[el.klass]
            except KeyError:
                raise UnknownElementError(f"no handler for object class {el.klass!r}")
            return mte_fn(el)
        if el.name in self.message_handlers:
            return self.message_handlers[el.name][0](el)
        return INF

    def element_tick(self, el: Element, t: Fraction) -> Element:
        if isinstance(el, ModelObject):
            try:
                _, tick_fn = self.object_handlers[el.klass]
            except KeyError:
                raise UnknownElementError(f"no handler for object class {el.klass!r}")
            return tick_fn(el, t)
        if el.name in self.message_handlers:
            return self.message_handlers[el.name][1](el, t)
        return el

    # -- whole-configuration operations -----------------------------------

    def mte(self, config: Configuration) -> TimeInf:
        """Maximal time elapse: min over elements, INF when empty."""
        bound: TimeInf = INF
        for el in config:
            bound = time_min(bound, self.element_mte(el))
        return bound

    def tick(self, config: Configuration, t: "Fraction | int") -> Configuration:
        """Advance every element by t.  t must not exceed mte(config)."""
        t = as_time(t)
        bound = self.mte(config)
        if t > bound:
            raise TickOvershootError(f"tick {t} exceeds mte {bound}")
        return Configuration(self.element_tick(el, t) for el in config)

    def first_candidate(self, config: Configuration) -> Configuration | None:
        for rule in self.rules:
            for cand in rule.candidates(config):
                return cand
        return None

    def enabled_candidates(self, config: Configuration) -> list[Configuration]:
        """All applications of the first enabled rule (declaration order).

        Earlier rules suppress later ones; within the enabled rule every
        match position is returned.  zero_step always takes the first.
        """
        for rule in self.rules:
            cands = list(rule.candidates(config))
            if cands:
                return cands
        return []

    def zero_step(
        self, config: Configuration, budget: int = ZERO_STEP_BUDGET
    ) -> Configuration:
        """Apply zero-time rules to the fixpoint.

        Deterministic: first enabled rule in declaration order, first match
        in canonical element order.  More than `budget` applications raises
        LivelockSuspectedError.
        """
        steps = 0
        while True:
            nxt = self.first_candidate(config)
            if nxt is None:
                return config
            config = nxt
            steps += 1
            if steps >= budget:
                raise LivelockSuspectedError(
                    f"no zero-time fixpoint after {budget} rule applications"
                )


# -- canonical JSON form ---------------------------------------------------


def value_to_json(v: Value) -> Any:
    if v is None or isinstance(v, (bool, str)):
        return v
    if isinstance(v, (int, Fraction)):
        f = Fraction(v)
        return f.numerator if f.denominator == 1 else f"{f.numerator}/{f.denominator}"
    if isinstance(v, tuple):
        return [value_to_json(x) for x in v]
    if isinstance(v, Message):
        return message_to_json(v)
    if isinstance(v, ModelObject):
        return object_to_json(v)
    raise TypeError(f"unsupported value: {type(v).__name__}")


def message_to_json(m: Message) -> dict:
    return {
        "name": m.name,
        "args": [value_to_json(a) for a in m.args],
        "dir": m.direction.value,
    }


def object_to_json(o: ModelObject) -> dict:
    return {
        "id": o.id,
        "class": o.klass,
        "attrs": {k: value_to_json(v) for k, v in o.attrs.items()},
    }


def config_to_json(config: Configuration) -> list:
    return [
        object_to_json(el) if isinstance(el, ModelObject) else message_to_json(el)
        for el in config
    ]


_RAT = re.compile(r"^-?\d+/\d+$")


def value_from_json(v: Any) -> Value:
    """Inverse of value_to_json.  Strings shaped like p/q decode as rationals;
    payloads in this package never use such literals for anything else."""
    if isinstance(v, str) and _RAT.match(v):
        return Fraction(v)
    if isinstance(v, list):
        return tuple(value_from_json(x) for x in v)
    if isinstance(v, dict):
        if "name" in v and "args" in v:
            return message_from_json(v)
        if "id" in v and "class" in v:
            return object_from_json(v)
        raise ValueError(f"unrecognized element shape: {v}")
    return v


def message_from_json(d: dict) -> Message:
    return Message(
        d["name"],
        tuple(value_from_json(a) for a in d.get("args", [])),
        Direction(d.get("dir", "internal")),
    )


def object_from_json(d: dict) -> ModelObject:
    return ModelObject(
        d["id"],
        d["class"],
        {k: value_from_json(v) for k, v in d.get("attrs", {}).items()},
    )


def config_from_json(items: Iterable[dict]) -> Configuration:
    return Configuration(value_from_json(d) for d in items)
