"""The experiment driver.

One control loop owns the clock, the bus and every module. Each slot it ticks
sources, drains the bus, mirrors every production activation to the
experimental module, plans the slot for the active strategy, runs the plan, and
routes outputs: production to delivery, experimental to the log after
timestamp rewriting.
"""

from __future__ import annotations

import enum
import hashlib
import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Mapping, Optional, TextIO

from .bus import Container, MessageBus, Role, Route
from .clock import SimulationClock, freeze_for_activation, now
from .conditions import ConditionEnvelope, check_conditions
from .errors import ConfigError, InvariantError
from .records import LOG_FIELDS, TRACE_FIELDS, canonical_payload, dump_line, read_lines
from .runtime import Activation, ExecutionOutcome, ModuleHandle, ModuleRuntime, Status
from .strategies import (
    CPU0,
    EXPERIMENTAL,
    PRODUCTION,
    Downsampled,
    Strategy,
    parse_strategy,
    plan_slot,
)

AUX_LANE = "AUX"


class Event(str, enum.Enum):
    ACTIVATED = "Activated"
    COMPLETED = "Completed"
    INTERRUPTED = "Interrupted"
    SKIPPED = "Skipped"
    SUSPENDED = "Suspended"
    GATED = "Gated"
    DELIVERED = "Delivered"
    ABORTED = "Aborted"
    IDLE = "Idle"


@dataclass(frozen=True)
class TraceRecord:
    slot: int
    module: str
    role: str
    event: Event
    lane: Optional[str] = None
    steps: Optional[int] = None
    input_slot: Optional[int] = None
    sample_ts: Optional[int] = None
    virtual_time: Optional[int] = None
    sent_ts: Optional[int] = None
    payload_type: Optional[str] = None
    payload: Optional[str] = None

    def as_record(self, run_id: Optional[str] = None) -> dict[str, Any]:
        return {
            "slot": self.slot,
            "module": self.module,
            "role": self.role,
            "event": self.event.value,
            "lane": self.lane,
            "steps": self.steps,
            "input_slot": self.input_slot,
            "sample_ts": self.sample_ts,
            "virtual_time": self.virtual_time,
            "sent_ts": self.sent_ts,
            "payload_type": self.payload_type,
            "payload": self.payload,
            "run_id": run_id,
        }


@dataclass(frozen=True)
class ExperimentPlan:
    production_id: str
    experimental_id: Optional[str]
    strategy: Strategy
    duration_slots: int
    strategy_switches: tuple[tuple[int, Strategy], ...] = ()
    condition_envelope: Optional[ConditionEnvelope] = None
    seed: int = 0
    lanes: int = 2

    def __post_init__(self) -> None:
        object.__setattr__(self, "strategy", parse_strategy(self.strategy))
        switches = tuple((int(at), parse_strategy(s)) for at, s in self.strategy_switches)
        object.__setattr__(self, "strategy_switches", switches)
        if self.duration_slots < 0:
            raise ConfigError("duration_slots must be >= 0")
        slots = [at for at, _ in switches]
        if any(b <= a for a, b in zip(slots, slots[1:])):
            raise ConfigError(f"strategy switches must be strictly increasing, got {slots}")
        if slots and slots[0] <= 0:
            raise ConfigError("a strategy switch must be scheduled after slot 0")
        if self.experimental_id is not None:
            uses_downsampling = isinstance(self.strategy, Downsampled) or any(
                isinstance(s, Downsampled) for _, s in switches
            )
            if uses_downsampling and self.condition_envelope is None:
                raise ConfigError("a downsampled experiment needs a condition envelope")


@dataclass
class ExperimentReport:
    run_id: Optional[str]
    duration_slots: int
    event_counts: dict[str, int]
    production_activations: int
    experimental_completions: int
    experimental_slots: int
    skipped_production_slots: int
    suspended_slots: int
    gated: int
    experimental_outputs: int
    delivered: int
    strategy_timeline: list[tuple[int, str]]
    config: Optional[Mapping[str, Any]] = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "run_id": self.run_id,
            "duration_slots": self.duration_slots,
            "event_counts": dict(sorted(self.event_counts.items())),
            "production_activations": self.production_activations,
            "experimental_completions": self.experimental_completions,
            "experimental_slots": self.experimental_slots,
            "skipped_production_slots": self.skipped_production_slots,
            "suspended_slots": self.suspended_slots,
            "gated": self.gated,
            "experimental_outputs": self.experimental_outputs,
            "delivered": self.delivered,
            "strategy_timeline": [[slot, name] for slot, name in self.strategy_timeline],
            "config": self.config,
        }


def summarize(records: list[dict[str, Any]]) -> dict[str, Any]:
    """Report counters recomputed from raw trace records."""
    events = Counter(r["event"] for r in records)
    by = Counter((r["role"], r["event"]) for r in records)
    exp_slots = {r["slot"] for r in records if r["role"] == Role.EXPERIMENTAL.value and r["event"] == "Activated"}
    suspended = {r["slot"] for r in records if r["event"] == "Suspended"}
    return {
        "event_counts": dict(sorted(events.items())),
        "production_activations": by[(Role.PRODUCTION.value, "Activated")],
        "experimental_completions": by[(Role.EXPERIMENTAL.value, "Completed")],
        "experimental_slots": len(exp_slots),
        "skipped_production_slots": by[(Role.PRODUCTION.value, "Skipped")],
        "suspended_slots": len(suspended),
        "gated": events["Gated"],
        "delivered": events["Delivered"],
    }


def run_id_for(config: Any) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


ConditionSource = Callable[[int], Mapping[str, float]]


class Experiment:
    """Handle for one running experiment. Create with :func:`start_experiment`."""

    def __init__(
        self,
        plan: ExperimentPlan,
        runtime: ModuleRuntime,
        bus: MessageBus,
        *,
        conditions: Optional[ConditionSource] = None,
        run_id: Optional[str] = None,
        trace_path: Optional[Path] = None,
        log_path: Optional[Path] = None,
        config: Optional[Mapping[str, Any]] = None,
    ) -> None:
        self.plan = plan
        self.runtime = runtime
        self.bus = bus
        self.conditions = conditions
        self.run_id = run_id
        self.config = config
        self.slot = 0
        self.clock = SimulationClock()
        self.strategy: Strategy = plan.strategy
        self.timeline: list[tuple[int, str]] = [(0, str(plan.strategy))]
        self.records: list[TraceRecord] = []
        self.experimental_outputs = 0
        self.offered: dict[str, list[Activation]] = {plan.production_id: []}
        self._switches: dict[int, Strategy] = dict(plan.strategy_switches)
        self._finalized = False
        self._trace_path = Path(trace_path) if trace_path else None
        self._log_path = Path(log_path) if log_path else None
        self._trace_fh: Optional[TextIO] = None

        self.production = runtime.get(plan.production_id)
        if self.production.role is not Role.PRODUCTION:
            raise ConfigError(f"{plan.production_id!r} is not a production module")
        self.experimental: Optional[ModuleHandle] = None
        if plan.experimental_id is not None:
            self.experimental = runtime.get(plan.experimental_id)
            if self.experimental.role is not Role.EXPERIMENTAL:
                raise ConfigError(f"{plan.experimental_id!r} is not an experimental module")
            self.offered[plan.experimental_id] = []
            prod_subs = bus.subscriptions_of(plan.production_id)
            exp_subs = bus.subscriptions_of(plan.experimental_id)
            if prod_subs != exp_subs:
                raise ConfigError(
                    f"subscription mismatch: production {sorted(prod_subs)} "
                    f"vs experimental {sorted(exp_subs)}"
                )
        if self.production.spec.cost_steps > runtime.steps_per_slot:
            raise ConfigError("production cost exceeds the slot's step capacity")
        if self._trace_path is not None:
            self._trace_fh = open(self._trace_path, "w", encoding="utf-8", newline="\n")

    # -- control ---------------------------------------------------------

    @property
    def done(self) -> bool:
        return self.slot >= self.plan.duration_slots

    def switch_strategy(self, new_strategy: Any, at_slot: int) -> None:
        if at_slot <= self.slot:
            raise ConfigError(f"cannot switch at slot {at_slot}: current slot is {self.slot}")
        new_strategy = parse_strategy(new_strategy)
        if (
            isinstance(new_strategy, Downsampled)
            and self.experimental is not None
            and self.plan.condition_envelope is None
        ):
            raise ConfigError("switching to downsampling needs a condition envelope")
        self._switches[at_slot] = new_strategy

    def run(self) -> None:
        while not self.done:
            self.step_slot()

    # -- one slot --------------------------------------------------------

    def step_slot(self) -> list[TraceRecord]:
        if self._finalized:
            raise ConfigError("experiment already finalized")
        if self.done:
            raise ConfigError(f"experiment finished after {self.plan.duration_slots} slots")
        s = self.slot
        L = self.runtime.slot_length
        ctx = freeze_for_activation(s, L)
        out: list[TraceRecord] = []

        # sources tick at the slot boundary, so their samples are this slot's input
        sources = [h for h in self.runtime.handles if h.role is Role.REGULAR and not h.spec.subscriptions]
        for h in sources:
            self.runtime.tick(h, s)
            out += self._run_to_completion(h, s, ctx)

        for subscriber, container in self.bus.drain(s):
            h = self.runtime.get(subscriber)
            created, dropped = self.runtime.deliver(h, container, s)
            out += self._after_enqueue(h, s, created, dropped)

        if s in self._switches:
            new = self._switches.pop(s)
            if new != self.strategy:
                self.strategy = new
                self.timeline.append((s, str(new)))

        suspend = False
        if self.experimental is not None and isinstance(self.strategy, Downsampled):
            envelope = self.plan.condition_envelope
            if envelope is None:
                raise ConfigError("downsampling without a condition envelope")
            if self.conditions is None:
                raise ConfigError("downsampling needs a scenario condition source")
            suspend = not check_conditions(envelope, self.conditions(s))

        for h in self.runtime.handles:
            if h.role is not Role.EXPERIMENTAL and h not in sources:
                created, dropped = self.runtime.tick(h, s)
                out += self._after_enqueue(h, s, created, dropped)

        plan = plan_slot(
            self.strategy,
            s,
            self.runtime.steps_per_slot,
            self.production.spec.cost_steps,
            self.plan.lanes,
            slot_length=L,
            suspend_experiment=suspend,
        )

        prod_assignment = plan.budget_for(PRODUCTION)
        if plan.skip_production:
            p = self.production
            skipped = list(p.state.pending_inputs)
            p.state.pending_inputs.clear()
            for act in skipped:
                out.append(self._rec(s, p, Event.SKIPPED, CPU0, act=act))
        elif prod_assignment is not None:
            outcome = self.runtime.run_budgeted(
                self.production, prod_assignment.budget_steps, ctx, plan.lane_offset(prod_assignment)
            )
            out += self._outcome_records(s, self.production, prod_assignment.lane, outcome)
            out += self._route(s, self.production, outcome)

        for h in self.runtime.handles:
            if h.role is Role.REGULAR and h not in sources:
                out += self._run_to_completion(h, s, ctx)

        if self.experimental is not None:
            e = self.experimental
            exp_assignment = plan.budget_for(EXPERIMENTAL)
            if plan.experiment_suspended:
                out.append(self._rec(s, e, Event.SUSPENDED, None, act=e.state.active_input))
            elif exp_assignment is not None:
                outcome = self.runtime.run_budgeted(
                    e, exp_assignment.budget_steps, ctx, plan.lane_offset(exp_assignment)
                )
                out += self._outcome_records(s, e, exp_assignment.lane, outcome)
                out += self._route(s, e, outcome)

        self.slot += 1
        self.clock.advance(self.slot * L)
        self._emit(out)
        return out

    # -- helpers ---------------------------------------------------------

    def _after_enqueue(
        self, h: ModuleHandle, s: int, created: list[Activation], dropped: list[Activation]
    ) -> list[TraceRecord]:
        out = [self._rec(s, h, Event.ABORTED, None, act=a) for a in dropped]
        if h is self.production:
            self.offered[h.id].extend(created)
            if self.experimental is not None:
                for act in created:
                    # same Activation object: identical inputs and frozen clock
                    self.offered[self.experimental.id].append(act)
                    for stale in self.runtime.enqueue(self.experimental, act):
                        out.append(self._rec(s, self.experimental, Event.ABORTED, None, act=stale))
        return out

    def _run_to_completion(self, h: ModuleHandle, s: int, ctx) -> list[TraceRecord]:
        out: list[TraceRecord] = []
        while h.has_work:
            outcome = self.runtime.run_budgeted(h, h.spec.cost_steps, ctx)
            out += self._outcome_records(s, h, AUX_LANE, outcome)
            out += self._route(s, h, outcome)
        return out

    def _outcome_records(
        self, s: int, h: ModuleHandle, lane: str, outcome: ExecutionOutcome
    ) -> list[TraceRecord]:
        if outcome.status is Status.IDLE:
            return [self._rec(s, h, Event.IDLE, lane)]
        act = outcome.activation
        if outcome.steps_used == 0:
            return [self._rec(s, h, Event.INTERRUPTED, lane, steps=0, act=act)]
        event = Event.COMPLETED if outcome.status is Status.COMPLETED else Event.INTERRUPTED
        return [
            self._rec(s, h, Event.ACTIVATED, lane, act=act),
            self._rec(s, h, event, lane, steps=outcome.steps_used, act=act),
        ]

    def _route(self, s: int, h: ModuleHandle, outcome: ExecutionOutcome) -> list[TraceRecord]:
        if outcome.status is not Status.COMPLETED:
            return []
        act = outcome.activation
        out = []
        for container in outcome.outputs:
            if h.role is Role.EXPERIMENTAL:
                self.experimental_outputs += 1
                rewritten = self.bus.rewrite_send_timestamp(
                    container, act.input_slot, self.production.nominal_latency
                )
                route = self.bus.publish(
                    rewritten, h.role, slot=s, physical_sent_ts=outcome.finished_at
                )
                if route is not Route.EXPERIMENT_LOG:
                    raise InvariantError(f"experimental output from {h.id} routed to {route.value}")
                out.append(self._rec(s, h, Event.GATED, None, act=act, container=rewritten))
            else:
                route = self.bus.publish(container, h.role, slot=s)
                if route is not Route.DELIVERY:
                    raise InvariantError(f"{h.role.value} output from {h.id} routed to {route.value}")
                out.append(self._rec(s, h, Event.DELIVERED, None, act=act, container=container))
        return out

    def _rec(
        self,
        s: int,
        h: ModuleHandle,
        event: Event,
        lane: Optional[str],
        *,
        steps: Optional[int] = None,
        act: Optional[Activation] = None,
        container: Optional[Container] = None,
    ) -> TraceRecord:
        fields: dict[str, Any] = {}
        if act is not None:
            fields["input_slot"] = act.input_slot
            fields["virtual_time"] = int(now(act.ctx))
            if act.sample_ts is not None:
                fields["sample_ts"] = int(act.sample_ts)
        if container is not None:
            fields["sample_ts"] = int(container.sample_ts)
            fields["sent_ts"] = int(container.sent_ts)
            fields["payload_type"] = container.payload_type
            fields["payload"] = canonical_payload(container.payload)
        return TraceRecord(s, h.id, h.role.value, event, lane, steps, **fields)

    def _emit(self, records: list[TraceRecord]) -> None:
        self.records.extend(records)
        if self._trace_fh is not None:
            for r in records:
                self._trace_fh.write(dump_line(r.as_record(self.run_id), TRACE_FIELDS))
                self._trace_fh.write("\n")

    # -- reporting -------------------------------------------------------

    def trace_dicts(self) -> list[dict[str, Any]]:
        return [r.as_record(self.run_id) for r in self.records]

    def log_dicts(self) -> list[dict[str, Any]]:
        return [entry.as_record(self.run_id) for entry in self.bus.experiment_log]

    def finalize(self) -> ExperimentReport:
        if self._finalized:
            raise ConfigError("experiment already finalized")
        self._finalized = True
        if self._trace_fh is not None:
            self._trace_fh.close()
            self._trace_fh = None
        if self._log_path is not None:
            with open(self._log_path, "w", encoding="utf-8", newline="\n") as fh:
                for record in self.log_dicts():
                    fh.write(dump_line(record, LOG_FIELDS))
                    fh.write("\n")

        counts = summarize(self.trace_dicts())
        report = ExperimentReport(
            run_id=self.run_id,
            duration_slots=self.slot,
            experimental_outputs=self.experimental_outputs,
            strategy_timeline=list(self.timeline),
            config=self.config,
            **counts,
        )
        if self._trace_path is not None:
            recount = summarize(list(read_lines(self._trace_path)))
            if recount != counts:
                raise InvariantError("trace file does not match in-memory trace")
        leaked = self.bus.experimental_deliveries()
        if leaked:
            raise InvariantError(f"{len(leaked)} experimental containers reached subscribers")
        if report.gated != report.experimental_outputs or len(self.bus.experiment_log) != report.gated:
            raise InvariantError(
                f"gated {report.gated} != experimental outputs {report.experimental_outputs}"
            )
        return report


def start_experiment(
    plan: ExperimentPlan,
    runtime: ModuleRuntime,
    bus: MessageBus,
    **kwargs: Any,
) -> Experiment:
    """Validate ``plan`` against the registered modules and open the trace at slot 0."""
    for module_id in (plan.production_id, plan.experimental_id):
        if module_id is not None and module_id not in runtime:
            raise ConfigError(f"module {module_id!r} is not registered")
    return Experiment(plan, runtime, bus, **kwargs)
