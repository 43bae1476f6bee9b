"""Containers, routing and the experiment log.

Production and regular outputs are queued for downstream subscribers and handed
out at slot boundaries. Experimental outputs never enter that queue: they are
appended to the experiment log together with their physical and rewritten send
timestamps.
"""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass
from typing import Any, Optional

from .clock import VirtualTime
from .errors import RoutingError
from .records import canonical_payload


class Role(str, enum.Enum):
    PRODUCTION = "production"
    EXPERIMENTAL = "experimental"
    REGULAR = "regular"


class Route(str, enum.Enum):
    DELIVERY = "delivery"
    EXPERIMENT_LOG = "experiment_log"


@dataclass(frozen=True)
class Container:
    payload_type: str
    payload: Any
    sent_ts: VirtualTime
    sample_ts: VirtualTime
    source_module: str
    received_ts: Optional[VirtualTime] = None

    def __post_init__(self) -> None:
        if not self.payload_type:
            raise RoutingError("container payload_type must be non-empty")
        if self.sample_ts > self.sent_ts:
            raise RoutingError(
                f"sample_ts {int(self.sample_ts)} after sent_ts {int(self.sent_ts)}"
            )
        if self.received_ts is not None and self.sent_ts > self.received_ts:
            raise RoutingError(
                f"sent_ts {int(self.sent_ts)} after received_ts {int(self.received_ts)}"
            )

    def replace(self, **changes: Any) -> Container:
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class Subscription:
    module_id: str
    payload_type: str


@dataclass(frozen=True)
class LogEntry:
    slot: int
    container: Container
    role: Role
    physical_sent_ts: VirtualTime
    rewritten_sent_ts: VirtualTime

    def as_record(self, run_id: Optional[str] = None) -> dict[str, Any]:
        return {
            "slot": self.slot,
            "source": self.container.source_module,
            "role": self.role.value,
            "payload_type": self.container.payload_type,
            "sample_ts": int(self.container.sample_ts),
            "physical_sent_ts": int(self.physical_sent_ts),
            "rewritten_sent_ts": int(self.rewritten_sent_ts),
            "payload": canonical_payload(self.container.payload),
            "run_id": run_id,
        }


class MessageBus:
    def __init__(self, slot_length: int) -> None:
        if slot_length <= 0:
            raise RoutingError(f"slot_length must be positive, got {slot_length}")
        self.slot_length = slot_length
        self._roles: dict[str, Role] = {}
        self._subscriptions: list[Subscription] = []
        self._pending: list[Container] = []
        self.experiment_log: list[LogEntry] = []
        # every container ever handed to a subscriber, for gating audits
        self.delivered: list[tuple[str, Container]] = []
        self.published_for_delivery: list[Container] = []

    def register(self, module_id: str, role: Role, subscriptions: tuple[str, ...] = ()) -> None:
        if module_id in self._roles:
            raise RoutingError(f"module {module_id!r} already registered on the bus")
        self._roles[module_id] = Role(role)
        for payload_type in subscriptions:
            self._subscriptions.append(Subscription(module_id, payload_type))

    def role_of(self, module_id: str) -> Role:
        try:
            return self._roles[module_id]
        except KeyError:
            raise RoutingError(f"unknown module {module_id!r}") from None

    def subscribers(self, payload_type: str) -> list[str]:
        return sorted(s.module_id for s in self._subscriptions if s.payload_type == payload_type)

    def subscriptions_of(self, module_id: str) -> frozenset[str]:
        return frozenset(s.payload_type for s in self._subscriptions if s.module_id == module_id)

    def publish(
        self,
        container: Container,
        source_role: Role,
        *,
        slot: int = 0,
        physical_sent_ts: Optional[VirtualTime] = None,
    ) -> Route:
        """Route one outgoing container.

        Experimental sources always go to the log; the registered role wins over
        the declared one so a mislabelled publish cannot leak downstream.
        """
        registered = self.role_of(container.source_module)
        if registered != Role(source_role):
            raise RoutingError(
                f"module {container.source_module!r} is registered as {registered.value}, "
                f"published as {Role(source_role).value}"
            )
        if registered is Role.EXPERIMENTAL:
            physical = container.sent_ts if physical_sent_ts is None else physical_sent_ts
            self.experiment_log.append(
                LogEntry(slot, container, registered, VirtualTime(physical), container.sent_ts)
            )
            return Route.EXPERIMENT_LOG
        self._pending.append(container)
        self.published_for_delivery.append(container)
        return Route.DELIVERY

    def drain(self, at_slot: int) -> list[tuple[str, Container]]:
        """Hand every pending container to its subscribers, received at ``at_slot``'s start."""
        received = VirtualTime(at_slot * self.slot_length)
        out: list[tuple[str, Container]] = []
        for container in self._pending:
            for subscriber in self.subscribers(container.payload_type):
                out.append((subscriber, container.replace(received_ts=received)))
        self._pending.clear()
        self.delivered.extend(out)
        return out

    def deliver_pending(self, slot_index: int) -> list[tuple[str, Container]]:
        """Close ``slot_index``: deliveries carry the next slot's activation time."""
        return self.drain(slot_index + 1)

    def rewrite_send_timestamp(
        self, container: Container, input_slot: int, nominal_latency: int
    ) -> Container:
        """Stamp an experimental output as if it left on the production schedule."""
        if nominal_latency < 0 or nominal_latency >= self.slot_length:
            raise RoutingError(
                f"nominal latency {nominal_latency} outside [0, {self.slot_length})"
            )
        sent = VirtualTime(input_slot * self.slot_length + nominal_latency)
        return container.replace(sent_ts=sent)

    def experimental_deliveries(self) -> list[tuple[str, Container]]:
        return [
            (sub, c) for sub, c in self.delivered if self._roles.get(c.source_module) is Role.EXPERIMENTAL
        ]
