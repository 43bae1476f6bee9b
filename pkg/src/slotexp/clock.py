"""Virtual time.

Modules never see wall time. Every activation receives a frozen
:class:`ClockContext` whose time is derived from the slot the input belongs to,
so production and experimental modules observe the same instant no matter when
the experimental work physically runs.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ClockError

DEFAULT_SLOT_LENGTH = 100_000  # 10 Hz


class VirtualTime(int):
    """Non-negative integer microseconds since the experiment epoch."""

    def __new__(cls, micros: int = 0) -> VirtualTime:
        if isinstance(micros, bool) or not isinstance(micros, int):
            raise ClockError(f"virtual time must be an integer, got {micros!r}")
        if micros < 0:
            raise ClockError(f"virtual time must be non-negative, got {micros}")
        return super().__new__(cls, micros)

    @property
    def micros(self) -> int:
        return int(self)

    def __add__(self, duration: int) -> VirtualTime:
        if duration < 0:
            raise ClockError(f"cannot add negative duration {duration}")
        return VirtualTime(int(self) + int(duration))

    __radd__ = __add__

    def __repr__(self) -> str:
        return f"VirtualTime({int(self)})"


def slot_length_for(frequency_hz: float) -> int:
    """Slot length in microseconds for a module running at ``frequency_hz``."""
    if frequency_hz <= 0:
        raise ClockError(f"frequency must be positive, got {frequency_hz}")
    length = round(1_000_000 / frequency_hz)
    if length <= 0:
        raise ClockError(f"frequency {frequency_hz} Hz is below 1 microsecond resolution")
    return length


@dataclass(frozen=True)
class ClockContext:
    """Time as seen by one activation. Immutable for the activation's lifetime."""

    slot_index: int
    slot_length: int

    def __post_init__(self) -> None:
        if self.slot_length <= 0:
            raise ClockError(f"slot_length must be positive, got {self.slot_length}")
        if self.slot_index < 0:
            raise ClockError(f"slot_index must be non-negative, got {self.slot_index}")

    @property
    def activation_time(self) -> VirtualTime:
        return VirtualTime(self.slot_index * self.slot_length)


def freeze_for_activation(slot_index: int, slot_length: int) -> ClockContext:
    return ClockContext(slot_index, slot_length)


def now(ctx: ClockContext) -> VirtualTime:
    """The only clock a module may read."""
    return ctx.activation_time


class SimulationClock:
    """Global driver clock. Only the scheduler loop advances it."""

    def __init__(self, start: int = 0) -> None:
        self._now = VirtualTime(start)
        self.history: list[VirtualTime] = [self._now]

    @property
    def value(self) -> VirtualTime:
        return self._now

    def advance(self, to: int) -> None:
        if to < self._now:
            raise ClockError(f"clock cannot move backwards: {int(self._now)} -> {to}")
        if to != self._now:
            self._now = VirtualTime(to)
            self.history.append(self._now)
