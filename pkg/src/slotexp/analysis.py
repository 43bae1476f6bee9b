"""A/B comparability between production and experimental outputs.

Outputs are paired on exact sample timestamp. Input duplication guarantees both
modules saw identical containers, so any tolerance here would only hide bugs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Optional

from .errors import ConfigError
from .records import read_lines

Comparator = Callable[[Any, Any], float]

COMPARATORS: dict[str, Comparator] = {}


def register_comparator(payload_type: str, comparator: Comparator) -> None:
    COMPARATORS[payload_type] = comparator


def abs_difference(a: Any, b: Any) -> float:
    return abs(float(a) - float(b))


def structural_difference(a: Any, b: Any) -> float:
    return 0.0 if a == b else 1.0


class RunMismatchError(ConfigError):
    """Trace and log come from different runs."""


@dataclass(frozen=True)
class OutputRecord:
    run_id: Optional[str]
    slot: int
    sample_ts: int
    payload_type: str
    payload: Any
    sent_ts: Optional[int] = None
    input_slot: Optional[int] = None
    virtual_time: Optional[int] = None


@dataclass(frozen=True)
class AlignedPair:
    sample_ts: int
    payload_type: str
    production: OutputRecord
    experimental: OutputRecord

    @property
    def experimental_slot(self) -> int:
        """Slot in which the experimental output physically completed."""
        return self.experimental.slot

    @property
    def sample_age(self) -> Optional[int]:
        input_slot = self.production.input_slot
        if input_slot is None:
            input_slot = self.experimental.input_slot
        if input_slot is None:
            return None
        return self.experimental.slot - input_slot


@dataclass(frozen=True)
class ComparabilityReport:
    coverage_ratio: float
    matched: int
    production_outputs: int
    experimental_outputs: int
    unmatched_production: int
    unmatched_experimental: int
    divergence_mean: Optional[float]
    divergence_max: Optional[float]
    max_sample_age: Optional[int]
    run_id: Optional[str] = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "run_id": self.run_id,
            "coverage_ratio": self.coverage_ratio,
            "matched": self.matched,
            "production_outputs": self.production_outputs,
            "experimental_outputs": self.experimental_outputs,
            "unmatched_production": self.unmatched_production,
            "unmatched_experimental": self.unmatched_experimental,
            "divergence": {"mean": self.divergence_mean, "max": self.divergence_max},
            "max_sample_age": self.max_sample_age,
        }


def production_outputs(trace_records: Iterable[Mapping[str, Any]]) -> list[OutputRecord]:
    """Delivered production containers from a trace."""
    out = []
    for r in trace_records:
        if r["role"] == "production" and r["event"] == "Delivered":
            out.append(
                OutputRecord(
                    r.get("run_id"),
                    r["slot"],
                    r["sample_ts"],
                    r["payload_type"],
                    json.loads(r["payload"]),
                    r.get("sent_ts"),
                    r.get("input_slot"),
                    r.get("virtual_time"),
                )
            )
    return out


def gated_outputs(trace_records: Iterable[Mapping[str, Any]]) -> list[OutputRecord]:
    """Gated experimental containers as recorded in a trace (includes observed virtual time)."""
    out = []
    for r in trace_records:
        if r["role"] == "experimental" and r["event"] == "Gated":
            out.append(
                OutputRecord(
                    r.get("run_id"),
                    r["slot"],
                    r["sample_ts"],
                    r["payload_type"],
                    json.loads(r["payload"]),
                    r.get("sent_ts"),
                    r.get("input_slot"),
                    r.get("virtual_time"),
                )
            )
    return out


def experimental_outputs(log_records: Iterable[Mapping[str, Any]]) -> list[OutputRecord]:
    """Experimental containers from an experiment log."""
    return [
        OutputRecord(
            r.get("run_id"),
            r["slot"],
            r["sample_ts"],
            r["payload_type"],
            json.loads(r["payload"]),
            r["rewritten_sent_ts"],
        )
        for r in log_records
    ]


def _check_run_ids(*sides: list[OutputRecord]) -> Optional[str]:
    ids = {rec.run_id for side in sides for rec in side}
    if len(ids) > 1:
        raise RunMismatchError(f"records come from different runs: {sorted(map(str, ids))}")
    return next(iter(ids), None)


def align_by_sample_time(
    prod_trace: list[OutputRecord], exp_trace: list[OutputRecord]
) -> tuple[list[AlignedPair], tuple[int, int]]:
    """Pair outputs with identical (payload_type, sample_ts); each output used at most once."""
    _check_run_ids(prod_trace, exp_trace)
    waiting: dict[tuple[str, int], list[OutputRecord]] = {}
    for rec in exp_trace:
        waiting.setdefault((rec.payload_type, rec.sample_ts), []).append(rec)
    pairs = []
    unmatched_prod = 0
    for rec in prod_trace:
        queue = waiting.get((rec.payload_type, rec.sample_ts))
        if queue:
            e = queue.pop(0)
            pairs.append(AlignedPair(rec.sample_ts, rec.payload_type, rec, e))
        else:
            unmatched_prod += 1
    unmatched_exp = sum(len(q) for q in waiting.values())
    return pairs, (unmatched_prod, unmatched_exp)


def comparability_report(
    pairs: list[AlignedPair],
    prod_count: int,
    exp_count: Optional[int] = None,
    *,
    comparators: Optional[Mapping[str, Comparator]] = None,
    run_id: Optional[str] = None,
) -> ComparabilityReport:
    if prod_count < len(pairs):
        raise ValueError(f"prod_count {prod_count} below pair count {len(pairs)}")
    if exp_count is None:
        exp_count = len(pairs)
    registry = COMPARATORS if comparators is None else comparators
    diffs = [
        registry.get(p.payload_type, structural_difference)(p.production.payload, p.experimental.payload)
        for p in pairs
    ]
    ages = [a for a in (p.sample_age for p in pairs) if a is not None]
    return ComparabilityReport(
        coverage_ratio=len(pairs) / prod_count if prod_count else 0.0,
        matched=len(pairs),
        production_outputs=prod_count,
        experimental_outputs=exp_count,
        unmatched_production=prod_count - len(pairs),
        unmatched_experimental=exp_count - len(pairs),
        divergence_mean=math.fsum(diffs) / len(diffs) if diffs else None,
        divergence_max=max(diffs) if diffs else None,
        max_sample_age=max(ages) if ages else None,
        run_id=run_id,
    )


def analyze_run(trace_path: Path, log_path: Path) -> ComparabilityReport:
    trace = list(read_lines(trace_path))
    log = list(read_lines(log_path))
    ids = {r.get("run_id") for r in trace} | {r.get("run_id") for r in log}
    if len(ids) > 1:
        raise RunMismatchError(f"trace and log come from different runs: {sorted(map(str, ids))}")
    run_id = next(iter(ids), None)
    prod = production_outputs(trace)
    exp = experimental_outputs(log)
    pairs, _ = align_by_sample_time(prod, exp)
    return comparability_report(pairs, len(prod), len(exp), run_id=run_id)
