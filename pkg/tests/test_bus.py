import pytest
from hypothesis import given, strategies as st

from slotexp.bus import Container, MessageBus, Role, Route
from slotexp.errors import RoutingError


def bus_with(*modules):
    bus = MessageBus(100_000)
    for module_id, role, subs in modules:
        bus.register(module_id, role, subs)
    return bus


def c(source="p", ptype="perception", sent=0, sample=0, payload=1.0):
    return Container(ptype, payload, sent, sample, source)


def test_routes_by_role():
    bus = bus_with(
        ("p", Role.PRODUCTION, ()), ("e", Role.EXPERIMENTAL, ()), ("ctl", Role.REGULAR, ("perception",))
    )
    assert bus.publish(c("p"), Role.PRODUCTION) is Route.DELIVERY
    assert bus.publish(c("e"), Role.EXPERIMENTAL) is Route.EXPERIMENT_LOG
    delivered = bus.drain(1)
    assert [(sub, x.source_module) for sub, x in delivered] == [("ctl", "p")]
    assert len(bus.experiment_log) == 1
    assert bus.experimental_deliveries() == []


def test_rejects_unknown_source_and_role_mismatch():
    bus = bus_with(("p", Role.PRODUCTION, ()))
    with pytest.raises(RoutingError):
        bus.publish(c("ghost"), Role.PRODUCTION)
    with pytest.raises(RoutingError):
        bus.publish(c("p"), Role.EXPERIMENTAL)


def test_container_validation():
    with pytest.raises(ValueError):
        Container("", 1, 0, 0, "p")
    with pytest.raises(ValueError):
        Container("x", 1, 0, 10, "p")  # sample after send
    with pytest.raises(ValueError):
        Container("x", 1, 10, 0, "p", received_ts=5)


def test_fan_out_and_empty_drain():
    bus = bus_with(("p", Role.PRODUCTION, ()), ("a", Role.REGULAR, ("x",)), ("b", Role.REGULAR, ("x",)))
    assert bus.drain(0) == []
    bus.publish(c("p", "x"), Role.PRODUCTION)
    out = bus.drain(2)
    assert [sub for sub, _ in out] == ["a", "b"]
    assert all(x.received_ts == 200_000 for _, x in out)


def test_rewrite_send_timestamp():
    bus = MessageBus(100_000)
    late = Container("perception", 1.0, 540_000, 300_000, "e")
    assert bus.rewrite_send_timestamp(late, 3, 60_000).sent_ts == 360_000
    assert bus.rewrite_send_timestamp(late, 3, 0).sent_ts == 300_000
    with pytest.raises(RoutingError):
        bus.rewrite_send_timestamp(late, 3, 100_000)


def test_log_keeps_physical_and_rewritten():
    bus = bus_with(("e", Role.EXPERIMENTAL, ()))
    late = Container("perception", 1.0, 540_000, 300_000, "e")
    bus.publish(bus.rewrite_send_timestamp(late, 3, 60_000), Role.EXPERIMENTAL, slot=5, physical_sent_ts=540_000)
    rec = bus.experiment_log[0].as_record("r")
    assert (rec["physical_sent_ts"], rec["rewritten_sent_ts"], rec["slot"]) == (540_000, 360_000, 5)


@given(st.lists(st.sampled_from(["p", "q"]), max_size=30))
def test_delivery_order_is_reproducible(sources):
    def once():
        bus = bus_with(
            ("p", Role.PRODUCTION, ()), ("q", Role.REGULAR, ()), ("s1", Role.REGULAR, ("x",)), ("s0", Role.REGULAR, ("x",))
        )
        for i, src in enumerate(sources):
            role = Role.PRODUCTION if src == "p" else Role.REGULAR
            bus.publish(c(src, "x", payload=i), role)
        return [(sub, x.source_module, x.payload) for sub, x in bus.drain(1)]

    first = once()
    assert first == once()
    # publish order first, then subscriber id
    assert [p for _, _, p in first] == sorted(p for _, _, p in first)
