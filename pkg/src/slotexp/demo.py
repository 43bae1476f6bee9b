"""Sensor -> perception -> controller fixture.

The sensor emits a noisy sinusoid once per slot. Production and experimental
perception are moving averages with their own window and step cost. The
controller is a time-triggered proportional law that acts on the newest
perception value it has received, so a skipped production slot is seen
downstream as a repeat of the previous output.

Noise comes from a counter-based generator (SplitMix64 over ``seed`` and the
sample index, then Box-Muller), so sample ``i`` can be recomputed anywhere
without replaying the stream. Any implementation following the same recipe
reproduces the same traces.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Mapping, Optional

from .analysis import abs_difference, register_comparator
from .bus import Container, MessageBus, Role
from .clock import ClockContext, now
from .errors import ConfigError
from .runtime import (
    Emit,
    ModuleRuntime,
    ModuleSpec,
    QueuePolicy,
    TimeTriggered,
)
from .strategies import Downsampled, is_skip_slot

_MASK64 = (1 << 64) - 1

SENSOR_ID = "sensor"
PRODUCTION_ID = "perception"
EXPERIMENTAL_ID = "perception_exp"
CONTROLLER_ID = "controller"

SAMPLE = "sample"
PERCEPTION = "perception"
COMMAND = "command"

CONDITION_PARAMETERS = ("amplitude", "noise_std", "input_rate_hz")

for _payload_type in (SAMPLE, PERCEPTION, COMMAND):
    register_comparator(_payload_type, abs_difference)


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def uniform(seed: int, counter: int) -> float:
    """Uniform on (0, 1], 53-bit resolution."""
    h = splitmix64((splitmix64(seed & _MASK64) + counter) & _MASK64)
    return ((h >> 11) + 1) * 2.0**-53


def gaussian(seed: int, index: int) -> float:
    u1 = uniform(seed, 2 * index)
    u2 = uniform(seed, 2 * index + 1)
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


@dataclass(frozen=True)
class SignalConfig:
    amplitude: float = 1.0
    period: float = 40.0
    phase: float = 0.0


@dataclass(frozen=True)
class PerceptionConfig:
    window: int = 4
    cost: int = 6
    latency: Optional[int] = None


@dataclass(frozen=True)
class ConditionOverride:
    """Parameter values in force for slots ``[from_slot, until_slot)``."""

    from_slot: int
    until_slot: int
    params: Mapping[str, float]


@dataclass(frozen=True)
class ScenarioConfig:
    n_slots: int = 100
    signal: SignalConfig = field(default_factory=SignalConfig)
    noise_std: float = 0.05
    seed: int = 1
    slot_length: int = 100_000
    steps_per_slot: int = 10
    production: PerceptionConfig = field(default_factory=lambda: PerceptionConfig(4, 6))
    experimental: PerceptionConfig = field(default_factory=lambda: PerceptionConfig(6, 7))
    controller_gain: float = 0.5
    setpoint: float = 0.0
    conditions: tuple[ConditionOverride, ...] = ()

    def __post_init__(self) -> None:
        if self.n_slots < 0:
            raise ConfigError("n_slots must be >= 0")
        if not self.signal.amplitude > 0:
            raise ConfigError("signal amplitude must be > 0")
        if not self.signal.period >= 2:
            raise ConfigError("signal period must be >= 2 slots")
        if not self.noise_std >= 0:
            raise ConfigError("noise_std must be >= 0")
        if self.slot_length <= 0 or self.steps_per_slot < 1:
            raise ConfigError("slot_length and steps_per_slot must be positive")
        if self.slot_length % self.steps_per_slot:
            raise ConfigError("slot_length must be divisible by steps_per_slot")
        for perc in (self.production, self.experimental):
            if perc.window < 1 or perc.cost < 1:
                raise ConfigError("perception window and cost must be >= 1")
        if self.production.cost > self.steps_per_slot:
            raise ConfigError("production perception cost exceeds steps_per_slot")
        for ov in self.conditions:
            unknown = set(ov.params) - {"amplitude", "noise_std"}
            if unknown:
                raise ConfigError(f"condition override sets unknown parameters {sorted(unknown)}")
            if ov.until_slot < ov.from_slot:
                raise ConfigError(f"condition override range [{ov.from_slot}, {ov.until_slot}) is empty")

    @property
    def input_rate_hz(self) -> float:
        return 1_000_000 / self.slot_length

    def conditions_at(self, slot: int) -> dict[str, float]:
        params = {
            "amplitude": float(self.signal.amplitude),
            "noise_std": float(self.noise_std),
            "input_rate_hz": self.input_rate_hz,
        }
        for ov in self.conditions:
            if ov.from_slot <= slot < ov.until_slot:
                params.update({k: float(v) for k, v in ov.params.items()})
        return params

    def sample_value(self, slot: int) -> float:
        cond = self.conditions_at(slot)
        angle = 2.0 * math.pi * slot / self.signal.period + self.signal.phase
        return cond["amplitude"] * math.sin(angle) + cond["noise_std"] * gaussian(self.seed, slot)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ScenarioConfig:
        data = dict(data)
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown scenario keys {sorted(unknown)}")
        try:
            if "signal" in data:
                data["signal"] = SignalConfig(**data["signal"])
            for key in ("production", "experimental"):
                if key in data:
                    data[key] = PerceptionConfig(**data[key])
            if "conditions" in data:
                data["conditions"] = tuple(
                    ConditionOverride(int(c["from_slot"]), int(c["until_slot"]), dict(c["params"]))
                    for c in data["conditions"]
                )
            return cls(**data)
        except (TypeError, KeyError) as exc:
            raise ConfigError(f"bad scenario config: {exc}") from exc

    def to_dict(self) -> dict[str, Any]:
        return {
            "n_slots": self.n_slots,
            "signal": vars(self.signal).copy(),
            "noise_std": self.noise_std,
            "seed": self.seed,
            "slot_length": self.slot_length,
            "steps_per_slot": self.steps_per_slot,
            "production": vars(self.production).copy(),
            "experimental": vars(self.experimental).copy(),
            "controller_gain": self.controller_gain,
            "setpoint": self.setpoint,
            "conditions": [
                {"from_slot": c.from_slot, "until_slot": c.until_slot, "params": dict(c.params)}
                for c in self.conditions
            ],
        }


class SineSensor:
    def __init__(self, scenario: ScenarioConfig) -> None:
        self.scenario = scenario

    def observe(self, container: Container) -> None:
        pass

    def compute(self, ctx: ClockContext, inputs: tuple[Container, ...]) -> list[Emit]:
        return [Emit(SAMPLE, self.scenario.sample_value(ctx.slot_index))]


class MovingAverage:
    """Mean of the newest ``window`` samples up to the activation's input.

    Samples are recorded on arrival, so an activation that runs late still
    averages exactly the samples that existed at its input's sample time.
    """

    def __init__(self, window: int) -> None:
        self.window = window
        self._ts: list[int] = []
        self._values: list[float] = []

    def observe(self, container: Container) -> None:
        if container.payload_type != SAMPLE:
            return
        ts = int(container.sample_ts)
        i = bisect.bisect_right(self._ts, ts)
        self._ts.insert(i, ts)
        self._values.insert(i, float(container.payload))

    def compute(self, ctx: ClockContext, inputs: tuple[Container, ...]) -> list[Emit]:
        samples = [c for c in inputs if c.payload_type == SAMPLE]
        if not samples:
            return []
        upto = bisect.bisect_right(self._ts, max(int(c.sample_ts) for c in samples))
        window = self._values[max(0, upto - self.window) : upto]
        return [Emit(PERCEPTION, math.fsum(window) / len(window))]


class ProportionalController:
    def __init__(self, gain: float, setpoint: float = 0.0) -> None:
        self.gain = gain
        self.setpoint = setpoint
        self._held: Optional[tuple[int, float]] = None

    def observe(self, container: Container) -> None:
        if container.payload_type != PERCEPTION:
            return
        ts = int(container.sample_ts)
        if self._held is None or ts >= self._held[0]:
            self._held = (ts, float(container.payload))

    def compute(self, ctx: ClockContext, inputs: tuple[Container, ...]) -> list[Emit]:
        if self._held is None:
            return [Emit(COMMAND, self.gain * (self.setpoint - 0.0), int(now(ctx)))]
        ts, value = self._held
        return [Emit(COMMAND, self.gain * (self.setpoint - value), ts)]


@dataclass
class Pipeline:
    scenario: ScenarioConfig
    runtime: ModuleRuntime
    bus: MessageBus
    module_ids: tuple[str, ...]
    production_id: str = PRODUCTION_ID
    experimental_id: Optional[str] = EXPERIMENTAL_ID
    downstream_id: str = CONTROLLER_ID

    def conditions_at(self, slot: int) -> dict[str, float]:
        return self.scenario.conditions_at(slot)


def build_pipeline(
    config: ScenarioConfig,
    *,
    experimental: bool = True,
    experimental_queue: Any = QueuePolicy.LATEST,
    production_queue: Any = QueuePolicy.ALL,
) -> Pipeline:
    runtime = ModuleRuntime(config.slot_length, config.steps_per_slot)
    bus = MessageBus(config.slot_length)
    rate = Fraction(1_000_000, config.slot_length)

    specs = [
        (
            ModuleSpec(SENSOR_ID, Role.REGULAR, TimeTriggered(rate), 1, nominal_latency=0),
            SineSensor(config),
        ),
        (
            ModuleSpec(
                PRODUCTION_ID,
                Role.PRODUCTION,
                TimeTriggered(rate),
                config.production.cost,
                nominal_latency=config.production.latency,
                subscriptions=(SAMPLE,),
                queue_policy=QueuePolicy(production_queue),
            ),
            MovingAverage(config.production.window),
        ),
        (
            ModuleSpec(
                CONTROLLER_ID,
                Role.REGULAR,
                TimeTriggered(rate),
                2,
                nominal_latency=0,
                subscriptions=(PERCEPTION,),
            ),
            ProportionalController(config.controller_gain, config.setpoint),
        ),
    ]
    if experimental:
        specs.append(
            (
                ModuleSpec(
                    EXPERIMENTAL_ID,
                    Role.EXPERIMENTAL,
                    TimeTriggered(rate),
                    config.experimental.cost,
                    nominal_latency=config.experimental.latency,
                    subscriptions=(SAMPLE,),
                    queue_policy=QueuePolicy(experimental_queue),
                ),
                MovingAverage(config.experimental.window),
            )
        )
    for spec, behavior in specs:
        runtime.register_module(spec, behavior)
        bus.register(spec.id, spec.role, spec.subscriptions)
    return Pipeline(
        config,
        runtime,
        bus,
        tuple(spec.id for spec, _ in specs),
        experimental_id=EXPERIMENTAL_ID if experimental else None,
    )


def reference_downstream(
    config: ScenarioConfig, skip_period: Optional[int] = None, phase: Optional[int] = None
) -> list[float]:
    """Controller commands by direct recurrence, without the scheduler.

    Slot ``s`` command acts on the newest perception output from a slot before
    ``s``; skipped production slots produce no output, so the previous value is
    held.
    """
    n = config.n_slots
    xs = []
    for s in range(n):
        amp, noise = config.signal.amplitude, config.noise_std
        for ov in config.conditions:
            if ov.from_slot <= s < ov.until_slot:
                amp = ov.params.get("amplitude", amp)
                noise = ov.params.get("noise_std", noise)
        angle = 2.0 * math.pi * s / config.signal.period + config.signal.phase
        xs.append(float(amp) * math.sin(angle) + float(noise) * gaussian(config.seed, s))

    w = config.production.window
    held = 0.0
    commands = []
    for s in range(n):
        commands.append(config.controller_gain * (config.setpoint - held))
        skipped = skip_period is not None and is_skip_slot(
            skip_period, s, Downsampled(skip_period, phase).skip_phase
        )
        if not skipped:
            window = xs[max(0, s - w + 1) : s + 1]
            held = math.fsum(window) / len(window)
    return commands
