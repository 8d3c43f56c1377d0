import pytest
from hypothesis import given, strategies as st

from tsnsim.kernel import (
    MS, US, ClockModel, Event, Kernel, SchedulingInPast, UnknownDevice,
    format_duration, format_seconds, parse_duration,
)

offsets = st.integers(-500, 500)


def test_event_at_zero_fires_first():
    k = Kernel()
    seen = []
    k.at(5, "x", lambda: seen.append("later"))
    k.schedule(Event(0, target="x", payload=lambda: seen.append("first")))
    k.run()
    assert seen == ["first", "later"]


def test_equal_time_events_fire_in_seq_order():
    k = Kernel()
    seen = []
    k.schedule(Event(1 * MS, seq=6, target="x", payload=lambda: seen.append(6)))
    k.schedule(Event(1 * MS, seq=5, target="x", payload=lambda: seen.append(5)))
    k.run()
    assert seen == [5, 6]


def test_insertion_order_breaks_ties():
    k = Kernel()
    seen = []
    for i in range(10):
        k.at(100, "x", lambda i=i: seen.append(i))
    k.run()
    assert seen == list(range(10))


def test_scheduling_in_the_past_is_rejected():
    k = Kernel()
    k.run_until(1000)
    with pytest.raises(SchedulingInPast):
        k.at(999, "x", lambda: None)


def test_run_until_on_empty_queue_advances_time():
    k = Kernel()
    k.run_until(5 * MS)
    assert k.now == 5 * MS
    assert k.fired == 0


def test_run_until_leaves_later_events_pending():
    k = Kernel()
    seen = []
    k.at(2 * MS, "x", lambda: seen.append(1))
    k.run_until(1 * MS)
    assert seen == [] and k.pending() == 1
    k.run_until(2 * MS)
    assert seen == [1]


def test_cancelled_events_do_not_fire():
    k = Kernel()
    seen = []
    e = k.at(10, "x", lambda: seen.append(1))
    Kernel.cancel(e)
    k.run()
    assert seen == [] and k.pending() == 0


def test_non_callable_payload_goes_to_handler():
    k = Kernel()
    got = []
    k.register(ClockModel("sw"), got.append)
    k.at(3, "sw", {"msg": 1})
    k.run()
    assert got == [{"msg": 1}]


@pytest.mark.parametrize("offset, now, expected", [
    (0, 10 * US, 10 * US),
    (500, 10 * US, 10_500),
    (-500, 100, 0),
])
def test_local_time(offset, now, expected):
    k = Kernel()
    k.register(ClockModel("d", offset))
    k.run_until(now)
    assert k.local_time("d") == expected


@pytest.mark.parametrize("offset, expected", [(0, 1 * MS), (500, 999_500), (-500, 1_000_500)])
def test_local_to_global(offset, expected):
    k = Kernel()
    k.register(ClockModel("d", offset))
    assert k.local_to_global("d", 1 * MS) == expected


def test_unknown_device():
    k = Kernel()
    with pytest.raises(UnknownDevice):
        k.local_time("ghost")
    with pytest.raises(UnknownDevice):
        k.local_to_global("ghost", 0)


def test_clock_offset_must_respect_bound():
    with pytest.raises(ValueError):
        ClockModel("d", 501)
    ClockModel("d", -500)


def test_timer_set_in_local_time_fires_at_that_local_instant():
    k = Kernel()
    k.register(ClockModel("d", -321))
    hit = []
    k.at(k.local_to_global("d", 2 * MS), "d", lambda: hit.append(k.local_time("d")))
    k.run()
    assert hit == [2 * MS]


@given(offset=offsets, t=st.integers(500, 10**12))
def test_round_trip(offset, t):
    k = Kernel()
    k.register(ClockModel("d", offset))
    assert k.local_time("d", at=k.local_to_global("d", t)) == t


@given(o1=offsets, o2=offsets, t=st.integers(0, 10**12))
def test_synchrony_bound(o1, o2, t):
    k = Kernel()
    k.register(ClockModel("a", o1))
    k.register(ClockModel("b", o2))
    assert abs(k.local_time("a", at=t) - k.local_time("b", at=t)) <= 2 * 500


@given(st.lists(st.integers(0, 1000), max_size=50))
def test_time_is_monotone_and_order_is_stable(times):
    k = Kernel(trace=True)
    for i, t in enumerate(times):
        k.at(t, "x", lambda: None, label=str(i))
    k.run()
    fired = [(t, int(label)) for t, _, _, label in k.trace]
    assert fired == sorted(fired)
    assert len(fired) == len(times)


@pytest.mark.parametrize("text, ns", [
    ("122.4us", 122_400), ("100ms", 100 * MS), ("1s", 10**9), ("50ns", 50), (7, 7), ("0.5us", 500),
])
def test_parse_duration(text, ns):
    assert parse_duration(text) == ns


@pytest.mark.parametrize("bad", ["1.5ns", "ten ms", "", "-1ms", True])
def test_parse_duration_rejects(bad):
    with pytest.raises(ValueError):
        parse_duration(bad)


@given(st.integers(0, 10**13))
def test_format_duration_round_trips(ns):
    assert parse_duration(format_duration(ns)) == ns


def test_format_seconds():
    assert format_seconds(373_350) == "0.000373350"
    assert format_seconds(106_373_350) == "0.106373350"
    assert format_seconds(2 * 10**9 + 5) == "2.000000005"
