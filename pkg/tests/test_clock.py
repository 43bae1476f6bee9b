import pytest
from hypothesis import given, strategies as st

from slotexp.clock import (
    ClockContext,
    SimulationClock,
    VirtualTime,
    freeze_for_activation,
    now,
    slot_length_for,
)
from slotexp.errors import ClockError


def test_now_is_slot_start():
    assert now(ClockContext(0, 100_000)) == 0
    assert now(ClockContext(5, 100_000)) == 500_000


def test_frozen_within_activation():
    ctx = freeze_for_activation(7, 100_000)
    assert now(ctx) == now(ctx) == 700_000
    with pytest.raises(AttributeError):
        ctx.slot_index = 8


def test_freeze_arithmetic():
    assert now(freeze_for_activation(0, 100_000)) == 0
    assert now(freeze_for_activation(3, 50_000)) == 150_000


def test_advance():
    clock = SimulationClock()
    clock.advance(0)
    assert clock.value == 0
    clock.advance(100_000)
    assert clock.value == 100_000
    with pytest.raises(ClockError):
        clock.advance(99_999)


def test_virtual_time_rejects_negative():
    with pytest.raises(ClockError):
        VirtualTime(-1)
    with pytest.raises(ClockError):
        VirtualTime(10) + -5


def test_slot_length_for_frequency():
    assert slot_length_for(10) == 100_000
    with pytest.raises(Exception):
        slot_length_for(0)


@given(st.lists(st.integers(0, 10**9), max_size=50))
def test_clock_history_non_decreasing(targets):
    clock = SimulationClock()
    for t in sorted(targets):
        clock.advance(t)
    assert list(clock.history) == sorted(clock.history)
