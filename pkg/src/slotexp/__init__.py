"""Run an experimental module next to a production module on a fixed compute budget.

Parallel, serial and downsampled execution share one virtual clock and one
message bus, so the chosen strategy is invisible to the modules themselves.
"""

from .bus import Container, MessageBus, Role, Route
from .clock import ClockContext, SimulationClock, VirtualTime, freeze_for_activation, now
from .conditions import ConditionEnvelope, check_conditions
from .errors import ClockError, ConfigError, InvariantError, RoutingError, SlotexpError
from .experimenter import Event, Experiment, ExperimentPlan, ExperimentReport, start_experiment
from .runtime import DataTriggered, Emit, ModuleRuntime, ModuleSpec, QueuePolicy, TimeTriggered
from .strategies import (
    Downsampled,
    Parallel,
    Serial,
    effective_exp_frequency,
    is_skip_slot,
    plan_slot,
)

__version__ = "0.1.0"

__all__ = [
    "ClockContext",
    "ClockError",
    "ConditionEnvelope",
    "ConfigError",
    "Container",
    "DataTriggered",
    "Downsampled",
    "Emit",
    "Event",
    "Experiment",
    "ExperimentPlan",
    "ExperimentReport",
    "InvariantError",
    "MessageBus",
    "ModuleRuntime",
    "ModuleSpec",
    "Parallel",
    "QueuePolicy",
    "Role",
    "Route",
    "RoutingError",
    "Serial",
    "SimulationClock",
    "SlotexpError",
    "TimeTriggered",
    "VirtualTime",
    "check_conditions",
    "effective_exp_frequency",
    "freeze_for_activation",
    "is_skip_slot",
    "now",
    "plan_slot",
    "start_experiment",
]
