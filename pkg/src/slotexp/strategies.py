"""Execution strategies and their per-slot plans.

Everything here is a pure function of (strategy, slot), which is what makes a
runtime strategy switch sound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Optional, Union

from .clock import DEFAULT_SLOT_LENGTH, ClockContext, freeze_for_activation
from .errors import ConfigError

CPU0 = "CPU0"
CPU1 = "CPU1"
PRODUCTION = "P"
EXPERIMENTAL = "E"


@dataclass(frozen=True)
class Parallel:
    def __str__(self) -> str:
        return "parallel"


@dataclass(frozen=True)
class Serial:
    def __str__(self) -> str:
        return "serial"


@dataclass(frozen=True)
class Downsampled:
    period_k: int
    phase: Optional[int] = None

    def __post_init__(self) -> None:
        if isinstance(self.period_k, bool) or not isinstance(self.period_k, int) or self.period_k < 2:
            raise ConfigError(f"downsampling period must be an integer >= 2, got {self.period_k!r}")
        if self.phase is not None and not 0 <= self.phase < self.period_k:
            raise ConfigError(f"phase {self.phase} outside [0, {self.period_k})")

    @property
    def skip_phase(self) -> int:
        return self.period_k - 1 if self.phase is None else self.phase

    def __str__(self) -> str:
        if self.phase is None:
            return f"downsampled:{self.period_k}"
        return f"downsampled:{self.period_k}:{self.phase}"


Strategy = Union[Parallel, Serial, Downsampled]


def parse_strategy(value: Any) -> Strategy:
    """Accepts ``"serial"``, ``"downsampled:3"`` or ``{"kind": "downsampled", "period": 3}``."""
    if isinstance(value, (Parallel, Serial, Downsampled)):
        return value
    if isinstance(value, str):
        kind, *rest = value.strip().lower().split(":")
        params: dict[str, Any] = {}
        if rest:
            params["period"] = rest[0]
        if len(rest) > 1:
            params["phase"] = rest[1]
    elif isinstance(value, dict):
        kind = str(value.get("kind", "")).lower()
        params = value
    else:
        raise ConfigError(f"cannot parse strategy {value!r}")
    if kind == "parallel":
        return Parallel()
    if kind == "serial":
        return Serial()
    if kind == "downsampled":
        try:
            period = int(params["period"])
            phase = params.get("phase")
            return Downsampled(period, None if phase is None else int(phase))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad downsampled strategy {value!r}: {exc}") from exc
    raise ConfigError(f"unknown strategy kind {kind!r}")


def is_skip_slot(period_k: int, slot_index: int, phase: Optional[int] = None) -> bool:
    if period_k < 2:
        raise ConfigError(f"downsampling period must be >= 2, got {period_k}")
    if slot_index < 0:
        raise ConfigError(f"slot index must be >= 0, got {slot_index}")
    if phase is None:
        phase = period_k - 1
    return slot_index % period_k == phase


@dataclass(frozen=True)
class Assignment:
    lane: str
    module: str  # PRODUCTION or EXPERIMENTAL
    budget_steps: int
    ctx: ClockContext

    def as_tuple(self) -> tuple[str, str, int]:
        return (self.lane, self.module, self.budget_steps)


@dataclass(frozen=True)
class SlotPlan:
    assignments: tuple[Assignment, ...]
    skip_production: bool = False
    experiment_suspended: bool = False

    def budget_for(self, module: str) -> Optional[Assignment]:
        for a in self.assignments:
            if a.module == module:
                return a
        return None

    def lane_offset(self, assignment: Assignment) -> int:
        """Steps already consumed on the same lane before ``assignment`` starts."""
        offset = 0
        for a in self.assignments:
            if a is assignment:
                return offset
            if a.lane == assignment.lane:
                offset += a.budget_steps
        raise ValueError("assignment not in plan")


def plan_slot(
    strategy: Strategy,
    slot_index: int,
    steps_per_slot: int,
    prod_cost: int,
    lanes_available: int = 2,
    *,
    slot_length: int = DEFAULT_SLOT_LENGTH,
    suspend_experiment: bool = False,
) -> SlotPlan:
    """Budgeted lane assignments for one slot.

    With ``suspend_experiment`` the slot is planned as if no experiment were
    attached: production runs (never skipped) and the experiment gets nothing.
    """
    if prod_cost < 1:
        raise ConfigError(f"production cost must be >= 1, got {prod_cost}")
    if prod_cost > steps_per_slot:
        raise ConfigError(f"production cost {prod_cost} exceeds slot capacity {steps_per_slot}")
    ctx = freeze_for_activation(slot_index, slot_length)
    if suspend_experiment:
        return SlotPlan((Assignment(CPU0, PRODUCTION, steps_per_slot, ctx),), experiment_suspended=True)
    if isinstance(strategy, Parallel):
        if lanes_available < 2:
            raise ConfigError("parallel execution needs two lanes")
        return SlotPlan(
            (
                Assignment(CPU0, PRODUCTION, steps_per_slot, ctx),
                Assignment(CPU1, EXPERIMENTAL, steps_per_slot, ctx),
            )
        )
    if isinstance(strategy, Serial):
        return SlotPlan(
            (
                Assignment(CPU0, PRODUCTION, prod_cost, ctx),
                Assignment(CPU0, EXPERIMENTAL, steps_per_slot - prod_cost, ctx),
            )
        )
    if isinstance(strategy, Downsampled):
        if is_skip_slot(strategy.period_k, slot_index, strategy.skip_phase):
            return SlotPlan((Assignment(CPU0, EXPERIMENTAL, steps_per_slot, ctx),), skip_production=True)
        return SlotPlan((Assignment(CPU0, PRODUCTION, steps_per_slot, ctx),))
    raise ConfigError(f"unknown strategy {strategy!r}")


def effective_exp_frequency(
    strategy: Strategy, steps_per_slot: int, prod_cost: int, exp_cost: int
) -> Fraction:
    """Experimental completions per slot under the slot-aligned execution model.

    An assignment runs at most one activation, so an activation needing ``c``
    assignments completes once every ``c`` granted slots; leftover steps after a
    completion are not reused.
    """
    if prod_cost < 1 or exp_cost < 1:
        raise ConfigError("costs must be >= 1")
    if isinstance(strategy, Parallel):
        return Fraction(1, math.ceil(exp_cost / steps_per_slot))
    if isinstance(strategy, Serial):
        leftover = steps_per_slot - prod_cost
        if leftover <= 0:
            return Fraction(0)
        return Fraction(1, math.ceil(exp_cost / leftover))
    if isinstance(strategy, Downsampled):
        return Fraction(1, strategy.period_k * math.ceil(exp_cost / steps_per_slot))
    raise ConfigError(f"unknown strategy {strategy!r}")


def throughput_bound(
    strategy: Strategy, steps_per_slot: int, prod_cost: int, exp_cost: int
) -> Fraction:
    """Fluid upper bound: granted steps per slot over experimental cost, capped at one per grant."""
    if prod_cost < 1 or exp_cost < 1:
        raise ConfigError("costs must be >= 1")
    if isinstance(strategy, Parallel):
        return min(Fraction(1), Fraction(steps_per_slot, exp_cost))
    if isinstance(strategy, Serial):
        return min(Fraction(1), Fraction(max(steps_per_slot - prod_cost, 0), exp_cost))
    if isinstance(strategy, Downsampled):
        k = strategy.period_k
        return min(Fraction(1, k), Fraction(steps_per_slot, exp_cost * k))
    raise ConfigError(f"unknown strategy {strategy!r}")
