from __future__ import annotations

import dataclasses
from typing import Any, Optional

import pytest

from slotexp.conditions import ConditionEnvelope
from slotexp.demo import PerceptionConfig, ScenarioConfig, build_pipeline
from slotexp.experimenter import ExperimentPlan, start_experiment
from slotexp.runtime import QueuePolicy

# generous enough that the default scenario never leaves it
WIDE_ENVELOPE = ConditionEnvelope(
    {"amplitude": (0.0, 100.0), "noise_std": (0.0, 10.0), "input_rate_hz": (0.0, 1000.0)}
)


def scenario(n_slots=100, prod_cost=6, exp_cost=7, steps=10, **kw) -> ScenarioConfig:
    return ScenarioConfig(
        n_slots=n_slots,
        steps_per_slot=steps,
        production=PerceptionConfig(4, prod_cost),
        experimental=PerceptionConfig(6, exp_cost),
        **kw,
    )


def run(
    sc: ScenarioConfig,
    strategy: Any = "serial",
    *,
    experimental: bool = True,
    exp_queue: QueuePolicy = QueuePolicy.ALL,
    envelope: Optional[ConditionEnvelope] = WIDE_ENVELOPE,
    switches=(),
    lanes: int = 2,
    **kwargs,
):
    """Build the demo pipeline, run it for ``sc.n_slots`` slots and finalize."""
    pipeline = build_pipeline(sc, experimental=experimental, experimental_queue=exp_queue)
    plan = ExperimentPlan(
        pipeline.production_id,
        pipeline.experimental_id,
        strategy,
        sc.n_slots,
        strategy_switches=tuple(switches),
        condition_envelope=envelope,
        lanes=lanes,
    )
    exp = start_experiment(plan, pipeline.runtime, pipeline.bus, conditions=pipeline.conditions_at, **kwargs)
    exp.run()
    report = exp.finalize()
    return exp, report


def schedule(records, production="perception", experimental="perception_exp") -> str:
    """Per-slot 'P'/'E' sequence of who actually got the slot, joined by commas.

    A slot shows every role that started or continued work, in lane order.
    """
    by_slot: dict[int, list[tuple[str, str]]] = {}
    for r in records:
        if r.event.value not in ("Activated", "Interrupted", "Completed"):
            continue
        if r.module == production:
            tag = "P"
        elif r.module == experimental:
            tag = "E"
        else:
            continue
        cell = by_slot.setdefault(r.slot, [])
        if (r.lane, tag) not in cell:
            cell.append((r.lane, tag))
    return ",".join("".join(t for _, t in by_slot.get(s, [])) for s in range(max(by_slot) + 1))


def lanes_of(records, module):
    return {r.lane for r in records if r.module == module and r.event.value == "Activated"}


def replace(sc: ScenarioConfig, **changes) -> ScenarioConfig:
    return dataclasses.replace(sc, **changes)


# one pass/fail line per acceptance criterion in the terminal summary
_criteria: dict[str, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion covered by a test")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n, title = marker.args
    key = str(n)
    failed = call.excinfo is not None and call.when in ("setup", "call")
    prev = _criteria.get(key)
    if failed:
        _criteria[key] = (title, "FAIL")
    elif call.when == "call" and (prev is None or prev[1] != "FAIL"):
        _criteria[key] = (title, "PASS")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_criteria, key=int):
        title, status = _criteria[key]
        terminalreporter.write_line(f"criterion {key}: {status}  {title}")


@pytest.fixture
def wide_envelope():
    return WIDE_ENVELOPE
