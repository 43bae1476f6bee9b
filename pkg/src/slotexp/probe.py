"""Preliminary downsampling tests.

Before an experiment may take production slots, the pipeline is simulated with
production skipped every k-th slot and the downstream output is compared with a
run that skips nothing. The smallest k whose divergence, and that of every
larger tested k, stays under the threshold is the minimum safe skip period.
The scenario conditions the probe ran under become the envelope an experiment
must stay inside.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass
from typing import Any, Callable, Mapping, Optional, Sequence, Union

from .conditions import ConditionEnvelope, check_conditions
from .demo import Pipeline, ScenarioConfig, build_pipeline
from .errors import ConfigError
from .experimenter import Event, ExperimentPlan, start_experiment
from .strategies import Downsampled, Serial

__all__ = [
    "ConditionEnvelope",
    "DownstreamTrace",
    "METRICS",
    "ProbeReport",
    "check_conditions",
    "max_abs_divergence",
    "mean_squared_divergence",
    "probe_skip_period",
    "run_baseline",
    "simulate_downstream",
]

Metric = Callable[[Sequence[float], Sequence[float]], float]
Builder = Callable[..., Pipeline]


def max_abs_divergence(baseline: Sequence[float], variant: Sequence[float]) -> float:
    if len(baseline) != len(variant):
        raise ValueError(f"trace lengths differ: {len(baseline)} vs {len(variant)}")
    return max((abs(a - b) for a, b in zip(baseline, variant)), default=0.0)


def mean_squared_divergence(baseline: Sequence[float], variant: Sequence[float]) -> float:
    if len(baseline) != len(variant):
        raise ValueError(f"trace lengths differ: {len(baseline)} vs {len(variant)}")
    if not baseline:
        return 0.0
    return math.fsum((a - b) ** 2 for a, b in zip(baseline, variant)) / len(baseline)


METRICS: dict[str, Metric] = {
    "max_abs": max_abs_divergence,
    "mse": mean_squared_divergence,
}


def resolve_metric(metric: Union[str, Metric]) -> tuple[str, Metric]:
    if callable(metric):
        return getattr(metric, "__name__", "custom"), metric
    try:
        return metric, METRICS[metric]
    except KeyError:
        raise ConfigError(f"unknown divergence metric {metric!r}; choose from {sorted(METRICS)}") from None


@dataclass(frozen=True)
class DownstreamTrace:
    slots: tuple[int, ...]
    sample_ts: tuple[int, ...]
    values: tuple[float, ...]

    def __len__(self) -> int:
        return len(self.values)

    @property
    def digest(self) -> str:
        h = hashlib.sha256()
        for slot, ts, value in zip(self.slots, self.sample_ts, self.values):
            h.update(f"{slot},{ts},{json.dumps(value)}\n".encode("utf-8"))
        return h.hexdigest()


def simulate_downstream(
    scenario: ScenarioConfig,
    n_slots: int,
    skip_period: Optional[int] = None,
    *,
    phase: Optional[int] = None,
    builder: Builder = build_pipeline,
) -> DownstreamTrace:
    """Run the pipeline without an experiment, optionally skipping production."""
    if n_slots < 1:
        raise ConfigError(f"n_slots must be >= 1, got {n_slots}")
    scenario = dataclasses.replace(scenario, n_slots=n_slots)
    pipeline = builder(scenario, experimental=False)
    if not pipeline.module_ids or pipeline.downstream_id not in pipeline.runtime:
        raise ConfigError("pipeline has no downstream module")
    strategy = Serial() if skip_period is None else Downsampled(skip_period, phase)
    plan = ExperimentPlan(pipeline.production_id, None, strategy, n_slots, lanes=1)
    exp = start_experiment(plan, pipeline.runtime, pipeline.bus, conditions=pipeline.conditions_at)
    exp.run()
    exp.finalize()
    out = [
        r
        for r in exp.records
        if r.module == pipeline.downstream_id and r.event is Event.DELIVERED
    ]
    return DownstreamTrace(
        tuple(r.slot for r in out),
        tuple(r.sample_ts for r in out),
        tuple(float(json.loads(r.payload)) for r in out),
    )


def run_baseline(
    scenario: ScenarioConfig, n_slots: int, *, builder: Builder = build_pipeline
) -> DownstreamTrace:
    return simulate_downstream(scenario, n_slots, None, builder=builder)


@dataclass(frozen=True)
class ProbeReport:
    tested_periods: tuple[int, ...]
    divergence_per_k: Mapping[int, float]
    threshold: float
    metric: str
    min_safe_period: Optional[int]
    envelope: ConditionEnvelope
    baseline_digest: str
    probe_id: str
    n_slots: int
    scenario: Mapping[str, Any]

    def to_dict(self) -> dict[str, Any]:
        return {
            "probe_id": self.probe_id,
            "metric": self.metric,
            "threshold": self.threshold,
            "n_slots": self.n_slots,
            "tested_periods": list(self.tested_periods),
            "divergence_per_k": {str(k): v for k, v in self.divergence_per_k.items()},
            "min_safe_period": self.min_safe_period,
            "baseline_digest": self.baseline_digest,
            "envelope": self.envelope.to_dict(),
            "scenario": dict(self.scenario),
        }


def min_safe_period(divergence_per_k: Mapping[int, float], threshold: float) -> Optional[int]:
    """Smallest k such that every tested k' >= k is within threshold."""
    safe = None
    for k in sorted(divergence_per_k, reverse=True):
        if divergence_per_k[k] <= threshold:
            safe = k
        else:
            break
    return safe


def observed_envelope(scenario: ScenarioConfig, n_slots: int, probe_id: str, safe: Optional[int]) -> ConditionEnvelope:
    ranges: dict[str, tuple[float, float]] = {}
    for slot in range(n_slots):
        for name, value in scenario.conditions_at(slot).items():
            lo, hi = ranges.get(name, (value, value))
            ranges[name] = (min(lo, value), max(hi, value))
    return ConditionEnvelope(ranges, probe_id=probe_id, min_safe_period=safe)


def probe_skip_period(
    scenario: ScenarioConfig,
    metric: Union[str, Metric],
    threshold: float,
    k_range: tuple[int, int],
    n_slots: int,
    *,
    builder: Builder = build_pipeline,
) -> ProbeReport:
    k_min, k_max = k_range
    if not 2 <= k_min <= k_max:
        raise ConfigError(f"k_range must satisfy 2 <= k_min <= k_max, got {k_range}")
    if not threshold >= 0:
        raise ConfigError(f"threshold must be >= 0, got {threshold}")
    metric_name, metric_fn = resolve_metric(metric)

    baseline = run_baseline(scenario, n_slots, builder=builder)
    divergence: dict[int, float] = {}
    for k in range(k_min, k_max + 1):
        variant = simulate_downstream(scenario, n_slots, k, builder=builder)
        divergence[k] = float(metric_fn(baseline.values, variant.values))

    resolved = dataclasses.replace(scenario, n_slots=n_slots).to_dict()
    probe_id = hashlib.sha256(
        json.dumps(
            {"scenario": resolved, "metric": metric_name, "threshold": threshold, "k_range": [k_min, k_max]},
            sort_keys=True,
        ).encode("utf-8")
    ).hexdigest()[:16]
    safe = min_safe_period(divergence, threshold)
    return ProbeReport(
        tested_periods=tuple(range(k_min, k_max + 1)),
        divergence_per_k=divergence,
        threshold=threshold,
        metric=metric_name,
        min_safe_period=safe,
        envelope=observed_envelope(scenario, n_slots, probe_id, safe),
        baseline_digest=baseline.digest,
        probe_id=probe_id,
        n_slots=n_slots,
        scenario=resolved,
    )
