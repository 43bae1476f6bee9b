import pytest
from hypothesis import given, settings, strategies as st

from slotexp.bus import MessageBus, Role
from slotexp.errors import ConfigError
from slotexp.experimenter import ExperimentPlan, Event, start_experiment, summarize
from slotexp.records import read_lines
from slotexp.runtime import DataTriggered, Emit, ModuleRuntime, ModuleSpec, TimeTriggered
from slotexp.strategies import is_skip_slot

from conftest import run, scenario, schedule


def pe_events(records, slot):
    return [
        (r.module, r.event.value, r.steps)
        for r in records
        if r.slot == slot and r.module in ("perception", "perception_exp")
    ]


class Const:
    def observe(self, container):
        pass

    def compute(self, ctx, inputs):
        return [Emit("y", 1)]


def two_module_setup(exp_subs=("x",), trigger=None):
    runtime, bus = ModuleRuntime(100_000), MessageBus(100_000)
    trigger = trigger or TimeTriggered(10)
    for spec in (
        ModuleSpec("p", Role.PRODUCTION, trigger, 3, subscriptions=("x",)),
        ModuleSpec("e", Role.EXPERIMENTAL, TimeTriggered(10), 3, subscriptions=exp_subs),
    ):
        runtime.register_module(spec, Const())
        bus.register(spec.id, spec.role, spec.subscriptions)
    return runtime, bus


def test_start_at_slot_zero():
    runtime, bus = two_module_setup()
    exp = start_experiment(ExperimentPlan("p", "e", "serial", 5), runtime, bus)
    assert exp.slot == 0 and not exp.records


def test_subscription_mismatch_rejected():
    runtime, bus = two_module_setup(exp_subs=("x", "z"))
    with pytest.raises(ConfigError):
        start_experiment(ExperimentPlan("p", "e", "serial", 5), runtime, bus)


def test_downsampling_needs_envelope():
    with pytest.raises(ConfigError):
        ExperimentPlan("p", "e", "downsampled:3", 5)
    with pytest.raises(ConfigError):
        ExperimentPlan("p", "e", "serial", 5, strategy_switches=((3, "downsampled:2"),))
    ExperimentPlan("p", None, "downsampled:3", 5)  # no experiment, nothing to gate


def test_serial_slot_records():
    exp, _ = run(scenario(n_slots=1), "serial")
    assert pe_events(exp.records, 0) == [
        ("perception", "Activated", None),
        ("perception", "Completed", 6),
        ("perception", "Delivered", None),
        ("perception_exp", "Activated", None),
        ("perception_exp", "Interrupted", 4),
    ]


def test_downsampled_skip_slot_records():
    exp, _ = run(scenario(n_slots=3, exp_cost=10), "downsampled:3")
    assert pe_events(exp.records, 2) == [
        ("perception", "Skipped", None),
        ("perception_exp", "Activated", None),
        ("perception_exp", "Completed", 10),
        ("perception_exp", "Gated", None),
    ]


def test_idle_without_inputs():
    runtime, bus = two_module_setup(trigger=DataTriggered(("x",)))
    exp = start_experiment(ExperimentPlan("p", "e", "serial", 2), runtime, bus)
    exp.run()
    assert {r.event for r in exp.records} == {Event.IDLE}


def test_runtime_switch():
    exp, report = run(scenario(n_slots=70, exp_cost=3), "serial", switches=((50, "downsampled:3"),))
    cells = schedule(exp.records).split(",")
    assert cells[:50] == ["PE"] * 50
    assert cells[50:] == ["E" if is_skip_slot(3, s) else "P" for s in range(50, 70)]
    assert report.strategy_timeline == [(0, "serial"), (50, "downsampled:3")]


def test_switch_validation():
    runtime, bus = two_module_setup()
    exp = start_experiment(ExperimentPlan("p", "e", "serial", 5), runtime, bus)
    exp.step_slot()
    with pytest.raises(ConfigError):
        exp.switch_strategy("parallel", 1 - 1)
    with pytest.raises(ConfigError):
        exp.switch_strategy("parallel", 1)  # current slot
    with pytest.raises(ConfigError):
        exp.switch_strategy("downsampled:2", 3)  # no envelope


def test_switch_to_same_strategy_is_invisible():
    sc = scenario(n_slots=20)
    plain, _ = run(sc, "serial")
    switched, report = run(sc, "serial", switches=((5, "serial"),))
    assert plain.trace_dicts() == switched.trace_dicts()
    assert report.strategy_timeline == [(0, "serial")]


def test_downsampled_counts():
    _, report = run(scenario(n_slots=7, exp_cost=10), "downsampled:3")
    assert report.production_activations == 5
    assert report.experimental_slots == 2


def test_empty_run():
    _, report = run(scenario(n_slots=0), "serial")
    assert report.production_activations == report.experimental_completions == report.gated == 0


def test_trace_file_recount(tmp_path):
    exp, report = run(
        scenario(n_slots=30), "serial", trace_path=tmp_path / "t.jsonl", log_path=tmp_path / "l.jsonl", run_id="abc"
    )
    counts = summarize(list(read_lines(tmp_path / "t.jsonl")))
    assert counts["production_activations"] == report.production_activations
    assert counts["gated"] == report.gated == len(list(read_lines(tmp_path / "l.jsonl")))


def test_finalize_twice():
    exp, _ = run(scenario(n_slots=3), "serial")
    with pytest.raises(ConfigError):
        exp.finalize()


def test_stretched_activation_keeps_input_clock():
    exp, _ = run(scenario(n_slots=10), "serial")
    gated = [r for r in exp.records if r.event is Event.GATED]
    for g in gated:
        assert g.slot > g.input_slot  # finished a slot later
        assert g.virtual_time == g.input_slot * 100_000


@settings(max_examples=40, deadline=None)
@given(
    st.sampled_from(["serial", "parallel", "downsampled:2", "downsampled:4"]),
    st.integers(1, 10),
    st.integers(1, 25),
    st.integers(0, 1000),
)
def test_determinism_and_input_symmetry(strategy, prod, exp_cost, seed):
    sc = scenario(n_slots=25, prod_cost=prod, exp_cost=exp_cost, seed=seed)
    a, ra = run(sc, strategy)
    b, rb = run(sc, strategy)
    assert a.trace_dicts() == b.trace_dicts() and a.log_dicts() == b.log_dicts()
    # both modules were offered the very same activations
    assert a.offered["perception"] == a.offered["perception_exp"]
    assert ra.gated == ra.experimental_outputs
