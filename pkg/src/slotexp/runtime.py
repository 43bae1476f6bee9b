"""Module abstraction and budgeted, resumable execution.

Compute is counted in abstract steps. A slot offers a fixed number of steps per
lane; an activation that needs more than its assignment is parked with its
progress and continues in a later assignment. Outputs are produced only when
the activation's full cost has been paid, so an interrupted activation yields
exactly what an uninterrupted one would.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Optional, Protocol, Union

from .bus import Container, Role
from .clock import ClockContext, VirtualTime, freeze_for_activation, now
from .errors import ConfigError


@dataclass(frozen=True)
class TimeTriggered:
    frequency_hz: float

    def __post_init__(self) -> None:
        if not self.frequency_hz > 0:
            raise ConfigError(f"time-triggered frequency must be > 0, got {self.frequency_hz}")


@dataclass(frozen=True)
class DataTriggered:
    payload_types: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.payload_types:
            raise ConfigError("data-triggered module needs at least one payload type")


Trigger = Union[TimeTriggered, DataTriggered]


class QueuePolicy(str, enum.Enum):
    ALL = "all"
    LATEST = "latest"


@dataclass(frozen=True)
class Emit:
    """One output produced by a module body. ``sample_ts`` defaults to the newest input's."""

    payload_type: str
    payload: Any
    sample_ts: Optional[int] = None


class Behavior(Protocol):
    def observe(self, container: Container) -> None: ...

    def compute(self, ctx: ClockContext, inputs: tuple[Container, ...]) -> list[Emit]: ...


@dataclass(frozen=True)
class ModuleSpec:
    id: str
    role: Role
    trigger: Trigger
    cost_steps: int
    nominal_latency: Optional[int] = None
    subscriptions: tuple[str, ...] = ()
    queue_policy: Optional[QueuePolicy] = None
    # pure function of the activation inputs, bounded by cost_steps
    cost_fn: Optional[Callable[[tuple[Container, ...]], int]] = None

    def __post_init__(self) -> None:
        if not self.id:
            raise ConfigError("module id must be non-empty")
        if isinstance(self.cost_steps, bool) or not isinstance(self.cost_steps, int) or self.cost_steps < 1:
            raise ConfigError(f"{self.id}: cost_steps must be an integer >= 1, got {self.cost_steps!r}")
        if self.nominal_latency is not None and self.nominal_latency < 0:
            raise ConfigError(f"{self.id}: nominal_latency must be >= 0")
        if isinstance(self.trigger, DataTriggered):
            missing = set(self.trigger.payload_types) - set(self.subscriptions)
            if missing:
                raise ConfigError(f"{self.id}: triggers on unsubscribed types {sorted(missing)}")

    @property
    def policy(self) -> QueuePolicy:
        if self.queue_policy is not None:
            return QueuePolicy(self.queue_policy)
        return QueuePolicy.LATEST if self.role is Role.EXPERIMENTAL else QueuePolicy.ALL

    def cost_for(self, inputs: tuple[Container, ...]) -> int:
        if self.cost_fn is None:
            return self.cost_steps
        cost = self.cost_fn(inputs)
        if not 1 <= cost <= self.cost_steps:
            raise ConfigError(f"{self.id}: input-dependent cost {cost} outside [1, {self.cost_steps}]")
        return cost


@dataclass(frozen=True)
class Activation:
    """One unit of work: the inputs and the frozen clock they belong to."""

    ctx: ClockContext
    inputs: tuple[Container, ...]

    @property
    def input_slot(self) -> int:
        return self.ctx.slot_index

    @property
    def sample_ts(self) -> Optional[VirtualTime]:
        if not self.inputs:
            return None
        return max(c.sample_ts for c in self.inputs)


@dataclass
class ExecutionState:
    steps_done: int = 0
    pending_inputs: deque = field(default_factory=deque)
    active_input: Optional[Activation] = None
    inbox: list = field(default_factory=list)


class Status(str, enum.Enum):
    COMPLETED = "completed"
    INTERRUPTED = "interrupted"
    IDLE = "idle"


@dataclass(frozen=True)
class ExecutionOutcome:
    status: Status
    steps_used: int = 0
    steps_done: int = 0
    outputs: tuple[Container, ...] = ()
    activation: Optional[Activation] = None
    resumed: bool = False
    finished_at: Optional[VirtualTime] = None


@dataclass
class ModuleHandle:
    spec: ModuleSpec
    behavior: Behavior
    period_slots: Optional[int]
    state: ExecutionState = field(default_factory=ExecutionState)
    nominal_latency: int = 0

    @property
    def id(self) -> str:
        return self.spec.id

    @property
    def role(self) -> Role:
        return self.spec.role

    @property
    def has_work(self) -> bool:
        return self.state.active_input is not None or bool(self.state.pending_inputs)


_ROLE_ORDER = {Role.PRODUCTION: 0, Role.REGULAR: 1, Role.EXPERIMENTAL: 2}


class ModuleRuntime:
    def __init__(self, slot_length: int, steps_per_slot: int = 10) -> None:
        if slot_length <= 0:
            raise ConfigError("slot_length must be positive")
        if steps_per_slot < 1:
            raise ConfigError("steps_per_slot must be >= 1")
        if slot_length % steps_per_slot:
            raise ConfigError(
                f"slot_length {slot_length} not divisible by steps_per_slot {steps_per_slot}"
            )
        self.slot_length = slot_length
        self.steps_per_slot = steps_per_slot
        self.step_duration = slot_length // steps_per_slot
        self._modules: dict[str, ModuleHandle] = {}

    def register_module(self, spec: ModuleSpec, behavior: Behavior) -> ModuleHandle:
        if spec.id in self._modules:
            raise ConfigError(f"duplicate module id {spec.id!r}")
        period = None
        if isinstance(spec.trigger, TimeTriggered):
            ratio = Fraction(1_000_000) / (Fraction(spec.trigger.frequency_hz) * self.slot_length)
            if ratio.denominator != 1 or ratio < 1:
                raise ConfigError(
                    f"{spec.id}: {spec.trigger.frequency_hz} Hz is not a whole multiple "
                    f"of the {self.slot_length} us slot"
                )
            period = int(ratio)
        if spec.nominal_latency is not None:
            latency = spec.nominal_latency
        else:
            # worst-case steps at the nominal step rate, kept strictly inside the slot
            latency = min(spec.cost_steps * self.step_duration, self.slot_length - 1)
        handle = ModuleHandle(spec, behavior, period, nominal_latency=latency)
        self._modules[spec.id] = handle
        return handle

    def get(self, module_id: str) -> ModuleHandle:
        try:
            return self._modules[module_id]
        except KeyError:
            raise ConfigError(f"unknown module {module_id!r}") from None

    def __contains__(self, module_id: str) -> bool:
        return module_id in self._modules

    @property
    def handles(self) -> list[ModuleHandle]:
        return sorted(self._modules.values(), key=lambda h: (_ROLE_ORDER[h.role], h.id))

    def is_time_due(self, handle: ModuleHandle, slot_index: int) -> bool:
        return handle.period_slots is not None and slot_index % handle.period_slots == 0

    def due_activations(self, slot_index: int) -> list[ModuleHandle]:
        due = []
        for handle in self.handles:
            if handle.role is Role.EXPERIMENTAL:
                # activated by mirroring, never by its own trigger
                if handle.has_work:
                    due.append(handle)
            elif self.is_time_due(handle, slot_index) or handle.has_work:
                due.append(handle)
        return due

    def enqueue(self, handle: ModuleHandle, activation: Activation) -> list[Activation]:
        """Queue an activation under the module's policy. Returns dropped stale activations.

        ``latest`` drops activations that have not started yet; an activation
        already in progress keeps its continuation.
        """
        dropped: list[Activation] = []
        if handle.spec.policy is QueuePolicy.LATEST:
            dropped = list(handle.state.pending_inputs)
            handle.state.pending_inputs.clear()
        handle.state.pending_inputs.append(activation)
        return dropped

    def deliver(
        self, handle: ModuleHandle, container: Container, slot_index: int
    ) -> tuple[list[Activation], list[Activation]]:
        """Hand a delivered container to a module. Returns (created, dropped) activations."""
        handle.behavior.observe(container)
        if handle.role is Role.EXPERIMENTAL:
            return [], []
        trigger = handle.spec.trigger
        if isinstance(trigger, DataTriggered) and container.payload_type in trigger.payload_types:
            activation = Activation(freeze_for_activation(slot_index, self.slot_length), (container,))
            return [activation], self.enqueue(handle, activation)
        handle.state.inbox.append(container)
        return [], []

    def tick(self, handle: ModuleHandle, slot_index: int) -> tuple[list[Activation], list[Activation]]:
        """Create the time-triggered activation for this slot, if due."""
        if not self.is_time_due(handle, slot_index) or handle.role is Role.EXPERIMENTAL:
            return [], []
        activation = Activation(
            freeze_for_activation(slot_index, self.slot_length), tuple(handle.state.inbox)
        )
        handle.state.inbox.clear()
        return [activation], self.enqueue(handle, activation)

    def run_budgeted(
        self,
        handle: ModuleHandle,
        budget_steps: int,
        slot_ctx: ClockContext,
        lane_offset_steps: int = 0,
    ) -> ExecutionOutcome:
        """Run at most one activation for up to ``budget_steps`` steps.

        ``slot_ctx`` is the physical slot (used only for the physical finish
        time); outputs are stamped from the activation's own frozen context.
        """
        if budget_steps < 0:
            raise ConfigError(f"budget must be >= 0, got {budget_steps}")
        state = handle.state
        if budget_steps == 0:
            if state.active_input is None:
                return ExecutionOutcome(Status.IDLE)
            return ExecutionOutcome(
                Status.INTERRUPTED, 0, state.steps_done, activation=state.active_input, resumed=True
            )
        resumed = state.active_input is not None
        if not resumed:
            if not state.pending_inputs:
                return ExecutionOutcome(Status.IDLE)
            state.active_input = state.pending_inputs.popleft()
            state.steps_done = 0
        activation = state.active_input
        cost = handle.spec.cost_for(activation.inputs)
        used = min(budget_steps, cost - state.steps_done)
        state.steps_done += used
        if state.steps_done < cost:
            return ExecutionOutcome(
                Status.INTERRUPTED, used, state.steps_done, activation=activation, resumed=resumed
            )
        finished_at = VirtualTime(
            int(now(slot_ctx)) + (lane_offset_steps + used) * self.step_duration
        )
        outputs = self._stamp(handle, activation)
        state.active_input = None
        state.steps_done = 0
        return ExecutionOutcome(
            Status.COMPLETED, used, cost, outputs, activation, resumed, finished_at
        )

    def _stamp(self, handle: ModuleHandle, activation: Activation) -> tuple[Container, ...]:
        ctx = activation.ctx
        emitted = handle.behavior.compute(ctx, activation.inputs)
        default_sample = activation.sample_ts if activation.inputs else now(ctx)
        sent = now(ctx) + handle.nominal_latency
        out = []
        for item in emitted:
            sample = default_sample if item.sample_ts is None else VirtualTime(item.sample_ts)
            out.append(Container(item.payload_type, item.payload, sent, sample, handle.id))
        return tuple(out)
